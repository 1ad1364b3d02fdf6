"""chartrender CLI: one-shot rendering and snippet execution, plus a serve
mode speaking line-oriented JSON over standard streams.

Every command prints exactly one structured JSON record to stdout and exits
0 (ok), 1 (error), or 124 (timeout).
"""

from __future__ import annotations

import argparse
import json

from .sandbox import EXIT_ERROR, execute_snippet, render_spec, serve


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chartrender", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    render_p = sub.add_parser("render", help="rasterize a chart document to PNG")
    render_p.add_argument("--spec", required=True, help="chart document path")
    render_p.add_argument("--out", required=True, help="output PNG path")
    render_p.add_argument("--timeout", type=float, default=30.0)

    exec_p = sub.add_parser("exec", help="run a plotting snippet in isolation")
    exec_p.add_argument("--snippet", required=True, help="snippet file path")
    exec_p.add_argument("--out-dir", required=True, help="artifact directory")
    exec_p.add_argument("--timeout", type=float, default=30.0)

    sub.add_parser("serve", help="line-oriented request/response over stdio")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "render":
        result = render_spec(spec_path=args.spec, out_path=args.out, timeout=args.timeout)
    elif args.command == "exec":
        result = execute_snippet(args.snippet, args.out_dir, args.timeout)
    else:
        return serve()
    print(json.dumps(result, sort_keys=True))
    return result.get("exit", EXIT_ERROR if not result.get("ok") else 0)


if __name__ == "__main__":
    raise SystemExit(main())
