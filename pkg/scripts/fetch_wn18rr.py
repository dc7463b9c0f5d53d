#!/usr/bin/env python3
"""Download the WN18RR link-prediction benchmark (tab-separated triples).

Usage: python scripts/fetch_wn18rr.py [--out data/wn18rr]
"""

import argparse
import os
import sys
import urllib.request

BASE_URLS = [
    "https://raw.githubusercontent.com/villmow/datasets_knowledge_embedding/master/WN18RR/text/",
    "https://raw.githubusercontent.com/TimDettmers/ConvE/master/WN18RR/",
]
FILES = ["train.txt", "valid.txt", "test.txt"]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=os.path.join("data", "wn18rr"))
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)
    for name in FILES:
        dest = os.path.join(args.out, name)
        if os.path.exists(dest):
            print(f"{dest} already present")
            continue
        last_err = None
        for base in BASE_URLS:
            try:
                print(f"downloading {base}{name}")
                urllib.request.urlretrieve(base + name, dest)
                break
            except OSError as err:
                last_err = err
        else:
            raise SystemExit(f"could not download {name}: {last_err}")
    for name in FILES:
        with open(os.path.join(args.out, name)) as fh:
            count = sum(1 for line in fh if line.strip())
        print(f"{name}: {count} triples")
    return 0


if __name__ == "__main__":
    sys.exit(main())
