#!/usr/bin/env python3
"""Run the CLI on the fixture task and validate every output against docs/schemas."""
import argparse
import json
import os
import re
import signal
import subprocess
import sys
import urllib.request

import jsonschema

HERE = os.path.dirname(os.path.abspath(__file__))
DATA = os.path.join(HERE, "..", "data")


def load_schemas(folder):
    out = {}
    for name in os.listdir(folder):
        if name.endswith(".schema.json"):
            with open(os.path.join(folder, name)) as f:
                schema = json.load(f)
            jsonschema.Draft202012Validator.check_schema(schema)
            out[name[: -len(".schema.json")]] = jsonschema.Draft202012Validator(schema)
    return out


def jsonl(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


class Checker:
    def __init__(self, cli, schemas, workdir):
        self.cli, self.schemas, self.workdir = cli, schemas, workdir
        self.failures = 0
        self.checked = 0

    def path(self, name):
        return os.path.join(self.workdir, name)

    def run(self, *args):
        proc = subprocess.run([self.cli, *args], capture_output=True, text=True)
        if proc.returncode != 0:
            raise RuntimeError(f"{' '.join(args)} exited {proc.returncode}: {proc.stderr.strip()}")
        return proc.stdout

    def validate(self, kind, doc, label):
        errors = sorted(self.schemas[kind].iter_errors(doc), key=lambda e: list(e.path))
        self.checked += 1
        for e in errors[:5]:
            where = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in e.path)
            print(f"FAIL {label}: {where}: {e.message[:200]}")
        if errors:
            self.failures += 1

    def validate_lines(self, kind, docs, label):
        if not docs:
            print(f"FAIL {label}: no records")
            self.failures += 1
        for i, d in enumerate(docs):
            self.validate(kind, d, f"{label} line {i + 1}")


def check_judge_stub(c):
    proc = subprocess.Popen([c.cli, "judge-stub", "--port", "0"], stdout=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        m = re.search(r"http://[^ ]+", line)
        if not m:
            raise RuntimeError(f"judge-stub printed {line!r}")
        base = m.group(0)
        req = urllib.request.Request(
            base + "/v1/judge",
            data=json.dumps({"layout_stats": {"collision_ratio": 0.25, "constraint_ratio": 0.5}}).encode(),
            headers={"Content-Type": "application/json"},
        )
        with urllib.request.urlopen(req, timeout=10) as res:
            c.validate("judge_response", json.loads(res.read()), "judge-stub /v1/judge")
    finally:
        proc.send_signal(signal.SIGTERM)
        if proc.wait(timeout=10) != 0:
            print(f"FAIL judge-stub exited {proc.returncode} after SIGTERM")
            c.failures += 1


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cli", required=True)
    ap.add_argument("--schemas", required=True)
    ap.add_argument("--task", required=True)
    ap.add_argument("--workdir", required=True)
    args = ap.parse_args()
    os.makedirs(args.workdir, exist_ok=True)
    c = Checker(args.cli, load_schemas(args.schemas), args.workdir)

    with open(args.task) as f:
        c.validate("task", json.load(f), "fixture task")

    c.run("rollout", "--task", args.task, "--group", "4", "--turns", "3", "--seed", "1", "--repeat", "2",
          "--dump", c.path("dump.jsonl"))
    c.validate_lines("dump", jsonl(c.path("dump.jsonl")), "rollout dump")
    example_cfg = os.path.join(args.schemas, "..", "config.example.json")
    c.run("rollout", "--task", args.task, "--config", example_cfg, "--dump", c.path("cfg.jsonl"))
    c.validate_lines("dump", jsonl(c.path("cfg.jsonl")), "rollout with the example config")
    c.run("rollout", "--policy", "replay", "--rollout", c.path("dump.jsonl"), "--dump", c.path("replay.jsonl"))
    c.validate_lines("dump", jsonl(c.path("replay.jsonl")), "replay dump")
    c.validate_lines("dump", jsonl(os.path.join(DATA, "golden_dump.jsonl")), "golden dump")

    c.run("advantage", "--dump", c.path("dump.jsonl"), "--out", c.path("adv.jsonl"))
    c.validate_lines("advantages", jsonl(c.path("adv.jsonl")), "advantages")
    out = c.run("advantage", "--dump", c.path("dump.jsonl"), "--modulation", "multiplicative", "--kl-beta", "0")
    c.validate_lines("advantages", [json.loads(l) for l in out.splitlines() if l], "advantages (multiplicative)")
    c.validate_lines("advantages", jsonl(os.path.join(DATA, "golden_advantages.jsonl")), "golden advantages")

    for name in ("rollout_valid.txt", "rollout_no_tags.txt"):
        out = c.run("score", "--task", args.task, "--rollout", os.path.join(DATA, name))
        c.validate("score", json.loads(out), f"score {name}")
    for name in ("components_row1.json", "components_row2.json"):
        out = c.run("score", "--components", os.path.join(DATA, name))
        c.validate("score", json.loads(out), f"score --components {name}")

    c.run("train-toy", "--task", args.task, "--steps", "3", "--out", c.path("log.jsonl"),
          "--checkpoint", c.path("ck.json"))
    c.validate_lines("train_step", jsonl(c.path("log.jsonl")), "train-toy log")
    with open(c.path("ck.json")) as f:
        c.validate("checkpoint", json.load(f), "checkpoint")

    check_judge_stub(c)

    # the schemas must also reject broken records
    golden = jsonl(os.path.join(DATA, "golden_dump.jsonl"))[0]
    broken = []
    d = json.loads(json.dumps(golden))
    d["trajectories"][0]["turns"][0]["tokens"][1]["logprob_new"] = 0.5
    broken.append(("dump", d, "positive log-prob"))
    d = json.loads(json.dumps(golden))
    del d["trajectories"][1]["turns"][0]["reward"]
    broken.append(("dump", d, "missing reward"))
    d = json.loads(json.dumps(golden))
    d["group"] = 1
    broken.append(("dump", d, "group of one"))
    broken.append(("judge_response", {"realism": 11, "functionality": 1, "layout": 1, "color_scheme": 1,
                                      "aesthetic": 1}, "grade 11"))
    broken.append(("score", {"schema_version": 1, "kind": "reward", "total": 1.0}, "bare total"))
    for kind, doc, label in broken:
        c.checked += 1
        if c.schemas[kind].is_valid(doc):
            print(f"FAIL {kind} schema accepted a record with a {label}")
            c.failures += 1

    print(f"validated {c.checked} documents, {c.failures} failing")
    return 1 if c.failures else 0


if __name__ == "__main__":
    sys.exit(main())
