#!/usr/bin/env python3
"""Counts post-keyframe training samples straight from trajectory metadata.

Walks every observation index and asks whether it is sampled, so it shares no
code path with the dataset builder.
"""

import argparse
import json
import pathlib
import sys


def sampled(t, keyframes, m):
    if t == 0 and t < keyframes[0]:
        return True
    for k in range(len(keyframes) - 1):
        if keyframes[k] <= t <= keyframes[k] + m and t < keyframes[k + 1]:
            return True
    return False


def count(meta, m):
    keyframes = meta["keyframes"]
    return sum(1 for t in range(len(meta["steps"])) if sampled(t, keyframes, m))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("traj_dir")
    ap.add_argument("--m", type=int, default=5)
    ap.add_argument("--manifest", help="dataset manifest to compare against")
    args = ap.parse_args()

    per_traj = {}
    for d in sorted(pathlib.Path(args.traj_dir).iterdir()):
        meta_path = d / "meta.json"
        if d.is_dir() and meta_path.exists():
            per_traj[d.name] = count(json.loads(meta_path.read_text()), args.m)
    total = sum(per_traj.values())
    print(total)

    if args.manifest:
        manifest = json.loads(pathlib.Path(args.manifest).read_text())
        listed = {t["id"]: t["count"] for t in manifest["trajectories"]}
        if listed != per_traj or manifest["total"] != total:
            print("mismatch: manifest total %d, enumerated %d" % (manifest["total"], total), file=sys.stderr)
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
