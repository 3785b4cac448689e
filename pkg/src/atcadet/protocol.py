"""Protocol files: the utterance lists that define corpus splits.

Headerless TSV with five columns: utt_id, relative wav path, label
(bonafide|spoof), generator_id, split (train|dev|eval).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import BadProtocol, DuplicateUtt

LABELS = ("bonafide", "spoof")
SPLITS = ("train", "dev", "eval")


@dataclass(frozen=True)
class ProtocolEntry:
    utt_id: str
    wav_path: str
    label: str
    generator_id: str
    split: str

    def __post_init__(self):
        if not self.utt_id:
            raise BadProtocol("empty utt_id")
        if self.label not in LABELS:
            raise BadProtocol(f"{self.utt_id}: label must be bonafide or spoof, got {self.label!r}")
        if self.split not in SPLITS:
            raise BadProtocol(f"{self.utt_id}: split must be train, dev or eval, got {self.split!r}")


def read_protocol(path) -> list:
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 5:
                raise BadProtocol(f"{path}:{lineno}: expected 5 tab-separated columns, got {len(cols)}")
            entry = ProtocolEntry(*cols)
            if entry.utt_id in seen:
                raise DuplicateUtt(f"{path}:{lineno}: duplicate utt_id {entry.utt_id!r}")
            seen.add(entry.utt_id)
            entries.append(entry)
    return entries


def write_protocol(path, entries) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(f"{e.utt_id}\t{e.wav_path}\t{e.label}\t{e.generator_id}\t{e.split}\n")


def filter_split(entries, split: str) -> list:
    if split not in SPLITS:
        raise BadProtocol(f"unknown split {split!r}")
    return [e for e in entries if e.split == split]
