"""Drive ``prunesim serve`` from another process, the way an external
learner would.  Uses a random policy and prints the return per episode.

    python demos/remote_client.py BANK_DIR EPISODES.jsonl [N_EPISODES]
"""
import json
import subprocess
import sys

import numpy as np


def main(bank, episodes, n=3):
    ids = [json.loads(s)["id"] for s in open(episodes).read().splitlines()[1:]][:n]
    proc = subprocess.Popen([sys.executable, "-m", "prunesim", "serve", "--bank", bank, "--episodes", episodes],
                            stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
    seq = 0

    def call(**msg):
        nonlocal seq
        seq += 1
        proc.stdin.write(json.dumps(dict(msg, seq=seq)) + "\n")
        proc.stdin.flush()
        return json.loads(proc.stdout.readline())

    print(call(type="hello")["observation"].keys())
    rng = np.random.default_rng(0)
    for ep in ids:
        if call(type="reset", episode=ep)["type"] != "observation":
            continue
        ret, done = 0.0, False
        while not done:
            r = call(type="step", action=rng.uniform(-1, 1, 6).tolist())
            ret += r["reward"]["total"]
            done = r["terminated"] or r["truncated"]
        print(f"{ep}: return {ret:.3f} after {r['info']['step']} steps, success {r['info']['success']}")
    call(type="close")
    proc.wait()


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2], int(sys.argv[3]) if len(sys.argv) > 3 else 3)
