"""Solve at the reference parameters and dump the data behind the figures.

    python3 scripts/figure_data.py --out out/figures --n 64 --h 2e-3
"""

import argparse
from pathlib import Path

from divratchet import cli
from divratchet.cli import RunConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="out")
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--h", type=float, default=2e-3)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = RunConfig.from_dict({"cascade": {"n": args.n, "h": args.h}, "out": str(out)})
    (out / "run_config.json").write_text(cfg.to_json())
    code = 0
    for cmd in ("solve", "verify", "export-figures"):
        code = code or cli.main([cmd, "--config", str(out / "run_config.json")])
    raise SystemExit(code)


if __name__ == "__main__":
    main()
