"""``nbend-bridge export job.json``: run an export job described in JSON.

Job schema:

    {
      "builder": "models/toy_gen.py::build",
      "checkpoint": "weights.pt",
      "latent_dim": 16,
      "seeds": [0, 1, 2],
      "out_dir": "dump/",
      "layers": [
        {"module": "block1.act", "index": 1, "cluster_count": 3},
        {"module": "block2.act", "index": 2}
      ]
    }
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .export import ExportError, ExportJob, export_activations


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nbend-bridge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="run an export job")
    p.add_argument("job", help="path to the job JSON")
    args = parser.parse_args(argv)

    try:
        job = ExportJob.from_json(json.loads(Path(args.job).read_text()))
        result = export_activations(job)
    except (ExportError, OSError, KeyError, ValueError) as exc:
        print(f"nbend-bridge: error: {exc}", file=sys.stderr)
        return 1
    for path in result["files"]:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
