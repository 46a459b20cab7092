"""English to Spanish word translation on the public MUSE data.

Downloads the fastText Wikipedia embeddings for both languages and the
En-Es test dictionary (several GB), then runs the full alignment with CSLS
retrieval through the command-line interface.  Expect tens of minutes of
CPU time.  The data directory can then be given to the acceptance suite
through ``INVARIOT_MUSE_DIR``.

    python3 demos/muse_en_es.py --data muse-data [--max-vocab 200000]
"""

import argparse
import os
import shutil
import urllib.request

from invariot.cli import main as cli_main

BASE = "https://dl.fbaipublicfiles.com/arrival"
FILES = {
    "wiki.en.vec": f"{BASE}/vectors/wiki.en.vec",
    "wiki.es.vec": f"{BASE}/vectors/wiki.es.vec",
    "en-es.5000-6500.txt": f"{BASE}/dictionaries/en-es.5000-6500.txt",
}


def fetch(data_dir):
    os.makedirs(data_dir, exist_ok=True)
    for name, url in FILES.items():
        path = os.path.join(data_dir, name)
        if os.path.exists(path):
            continue
        print(f"downloading {url}")
        tmp = path + ".part"
        with urllib.request.urlopen(url) as resp, open(tmp, "wb") as fh:
            shutil.copyfileobj(resp, fh, length=1 << 20)
        os.replace(tmp, path)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--data", default="muse-data")
    parser.add_argument("--max-vocab", default="200000")
    parser.add_argument("--out", default="muse_en_es.json")
    args = parser.parse_args()
    fetch(args.data)
    code = cli_main(["align",
                     "--src", os.path.join(args.data, "wiki.en.vec"),
                     "--tgt", os.path.join(args.data, "wiki.es.vec"),
                     "--dict", os.path.join(args.data, "en-es.5000-6500.txt"),
                     "--max-vocab", args.max_vocab,
                     "--map-out", os.path.splitext(args.out)[0] + ".npy",
                     "--trace", os.path.splitext(args.out)[0] + "_trace.csv",
                     "--out", args.out])
    raise SystemExit(code)


if __name__ == "__main__":
    main()
