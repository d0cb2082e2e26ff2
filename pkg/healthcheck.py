#!/usr/bin/env python3
import importlib
import sys

REQUIRED_MODULES = ("numpy", "scipy", "tqdm")
SABR_ATM_REFERENCE = 0.183


def ok(msg):
    print("[HEALTH] " + msg)


def fail(msg, code=1):
    print("[HEALTH] FAIL: " + msg, file=sys.stderr)
    sys.exit(code)


def check_imports():
    for name in REQUIRED_MODULES:
        try:
            module = importlib.import_module(name)
            ok(f"{name} {getattr(module, '__version__', '?')} OK")
        except Exception as e:
            fail(f"{name} import failed: {e}")


def check_table_value():
    try:
        from cli import cmd_table1
        first = cmd_table1().rows[0]
    except Exception as e:
        fail(f"table1 smoke run error: {e}")
    if float(first[2]) != SABR_ATM_REFERENCE:
        fail(f"SABR sigma_atm {first[2]} != {SABR_ATM_REFERENCE}")
    ok(f"table1 smoke value {first[2]} OK")


if __name__ == "__main__":
    check_imports()
    check_table_value()
    ok("All checks passed")
    sys.exit(0)
