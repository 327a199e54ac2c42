#!/usr/bin/env python3
"""Materialize MovieLens-100K u.data from a package mirror.

GroupLens downloads are not always reachable; the pytorch-widedeep wheel ships
the same 100,000-row table, so we pull it from there and write the original
tab-separated layout (user item rating timestamp).
"""
import argparse
import glob
import io
import os
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "pytorch_widedeep/datasets/data/MovieLens100k_data.parquet.brotli"


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default=os.path.join(
        os.path.dirname(__file__), "..", "data", "ml-100k", "u.data"))
    parser.add_argument("--wheel", help="use an already-downloaded wheel")
    args = parser.parse_args()

    import pandas as pd

    wheel = args.wheel
    tmp = None
    if wheel is None:
        tmp = tempfile.mkdtemp()
        subprocess.check_call([sys.executable, "-m", "pip", "download", "--no-deps",
                               "-q", "-d", tmp, "pytorch-widedeep==1.7.0"])
        wheel = glob.glob(os.path.join(tmp, "*.whl"))[0]
    with zipfile.ZipFile(wheel) as z:
        df = pd.read_parquet(io.BytesIO(z.read(MEMBER)))
    if len(df) != 100000:
        print(f"unexpected row count {len(df)}", file=sys.stderr)
        return 1
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    df[["user_id", "movie_id", "rating", "timestamp"]].to_csv(
        args.out, sep="\t", header=False, index=False)
    print(f"wrote {len(df)} rows to {os.path.abspath(args.out)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
