#!/usr/bin/env python3
# Copyright 2026 The curvedetect Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Rebuilds data/corpora/*.jsonl from the @stdlib/datasets-moby-dick and
@stdlib/datasets-sotu npm tarballs (both texts are in the public domain).

  npm pack @stdlib/datasets-moby-dick @stdlib/datasets-sotu
  python3 tools/prepare_corpora.py <moby-dick.tgz> <sotu.tgz> data/corpora
"""

import json
import re
import sys
import tarfile


def _normalize(text):
    return " ".join(text.split())


def moby_dick(path):
    out = []
    with tarfile.open(path) as tar:
        names = {m.name: m for m in tar.getmembers()}
        for i in range(1, 136):
            data = json.load(tar.extractfile(names[f"package/data/chapter_{i}.json"]))
            for para in re.split(r"\n\s*\n", data["text"]):
                para = _normalize(para)
                if para:
                    out.append(para)
    return out


def sotu(path, first_year=1790, last_year=1825, chunk_words=150):
    out = []
    with tarfile.open(path) as tar:
        members = sorted(
            (m for m in tar.getmembers()
             if re.match(r"package/data/\d{4}_.*\.txt$", m.name)),
            key=lambda m: m.name)
        for m in members:
            year = int(m.name.split("/")[-1][:4])
            if not first_year <= year <= last_year:
                continue
            text = _normalize(tar.extractfile(m).read().decode("utf-8"))
            sentences = re.split(r"(?<=[.!?])\s+", text)
            chunk = []
            for s in sentences:
                chunk.extend(s.split())
                if len(chunk) >= chunk_words:
                    out.append(" ".join(chunk))
                    chunk = []
            if len(chunk) >= 20:
                out.append(" ".join(chunk))
    return out


def write_jsonl(path, texts):
    with open(path, "w", encoding="utf-8") as f:
        for t in texts:
            f.write(json.dumps({"text": t}, ensure_ascii=False) + "\n")


def main(argv):
    if len(argv) != 4:
        print(__doc__, file=sys.stderr)
        return 2
    out_dir = argv[3]
    write_jsonl(f"{out_dir}/moby_dick.jsonl", moby_dick(argv[1]))
    write_jsonl(f"{out_dir}/sotu_1790_1825.jsonl", sotu(argv[2]))
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
