#!/usr/bin/env python3
"""
Setup verification script for the DecAP lab.

This script verifies:
- Bundled robot models load
- Each robot stands under a PD hold of its nominal pose
- Bundled run configs validate
- Seeded network initialization is reproducible
- The output root is writable
"""

import sys
from pathlib import Path

# --------------------------------------------------
# Ensure project root is on PYTHONPATH
# --------------------------------------------------
PROJECT_ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(PROJECT_ROOT))

import numpy as np
import torch

from src import dynamics
from src.config import settings
from src.control import Gains, pd_torque
from src.pipeline import load_run_config
from src.ppo import ActorCritic, seed_everything
from src.robots import list_bundled, load_model


def check_robots():
    """Load every bundled robot model"""
    print("🔍 Checking bundled robot models...")

    try:
        names = list_bundled()
        for name in names:
            model = load_model(name)
            print(f"   - {name}: {model.n_joints} joints, {model.n_feet} feet, {model.total_mass:.2f} kg")
        print(f"✅ Loaded {len(names)} robot models")
        return bool(names)
    except Exception as e:
        print(f"❌ Failed to load robot models: {e}")
        return False


def check_standing(seconds: float = 1.0, dt: float = 0.005):
    """Hold the nominal pose with PD(Kp=20, Kd=0.5) and check the base height"""
    print("\n🦿 Checking PD standing...")

    gains = Gains(kp=20.0, kd=0.5)
    ok = True
    for name in list_bundled():
        model = load_model(name)
        state = dynamics.initial_state(model)
        try:
            for _ in range(int(seconds / dt)):
                torques = pd_torque(model.q_nom, state.q, state.qdot, gains)
                state, _ = dynamics.step(state, torques, model, dt)
        except Exception as e:
            print(f"❌ {name}: simulation failed ({e})")
            ok = False
            continue
        error = abs(state.height - model.nominal_height) / model.nominal_height
        status = "✅" if error <= 0.1 else "❌"
        print(f"{status} {name}: height {state.height:.3f} m (nominal {model.nominal_height:.3f} m)")
        ok = ok and error <= 0.1
    return ok


def check_configs():
    """Validate bundled run configs"""
    print("\n⚙️  Checking bundled run configs...")

    try:
        configs = sorted(settings.bundled_config_dir.glob("*.json"))
        for path in configs:
            cfg = load_run_config(path)
            print(f"   - {path.name}: mode={cfg.mode}, robot={cfg.robot}")
        print(f"✅ {len(configs)} configs valid")
        return bool(configs)
    except Exception as e:
        print(f"❌ Config check failed: {e}")
        return False


def check_determinism():
    """Two seeded initializations must agree bit-for-bit"""
    print("\n🧪 Checking seeded network initialization...")

    try:
        outputs = []
        obs = np.linspace(-1.0, 1.0, 13)
        for _ in range(2):
            seed_everything(0)
            outputs.append(ActorCritic(13, 3).act(obs))
        same = np.array_equal(outputs[0], outputs[1])
        print(f"{'✅' if same else '❌'} torch {torch.__version__}, {settings.NUM_THREADS} thread(s)")
        return same
    except Exception as e:
        print(f"❌ Determinism check failed: {e}")
        return False


def check_output_root():
    """Check the run output directory"""
    print("\n📂 Checking output root...")

    root = settings.output_root
    try:
        root.mkdir(parents=True, exist_ok=True)
        probe = root / ".write_test"
        probe.write_text("ok")
        probe.unlink()
        print(f"✅ {root.resolve()} is writable")
        return True
    except OSError as e:
        print(f"❌ Cannot write to {root}: {e}")
        return False


def main():
    print("=" * 80)
    print("DecAP Lab - Setup Verification")
    print("=" * 80)

    results = []

    results.append(("Robot Models", check_robots()))
    results.append(("PD Standing", check_standing()))
    results.append(("Run Configs", check_configs()))
    results.append(("Determinism", check_determinism()))
    results.append(("Output Root", check_output_root()))

    print("\n" + "=" * 80)
    print("SETUP VERIFICATION SUMMARY")
    print("=" * 80)

    for name, success in results:
        status = "✅" if success else "❌"
        print(f"{status} {name}")

    all_passed = all(success for _, success in results)

    print("\n" + "=" * 80)

    if all_passed:
        print("🎉 All checks passed! The lab is ready to use.")
        print("\nNext steps:")
        print("1. Train a position policy:")
        print("   python scripts/decap_lab.py train-position --seed 0")
        print("2. See HOW_TO_RUN.md for recording imitation data and torque training")
    else:
        print("⚠️  Some checks failed.")
        print("   Review the messages above to resolve missing setup steps.")

    print("=" * 80)

    return 0 if all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
