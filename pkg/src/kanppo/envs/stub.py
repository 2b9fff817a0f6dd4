"""Minimal bridge child used for protocol conformance tests.

Run as ``python -m kanppo.envs.stub``.  ``obs[0]`` is the number of requests
served so far, the rest of the observation is zeros, and every step pays
``--reward``.  Episodes truncate after ``--horizon`` steps.  ``--bad-after N``
makes the N-th reply a malformed line.
"""

import argparse
import json
import sys


def main(argv=None):
    p = argparse.ArgumentParser(prog="kanppo-bridge-stub")
    p.add_argument("--obs-dim", type=int, default=3)
    p.add_argument("--act-dim", type=int, default=1)
    p.add_argument("--horizon", type=int, default=50)
    p.add_argument("--reward", type=float, default=1.0)
    p.add_argument("--bad-after", type=int, default=None)
    p.add_argument("--exit-after", type=int, default=None)
    args = p.parse_args(argv)

    out = sys.stdout
    out.write(
        json.dumps(
            {
                "name": "stub",
                "obs_dim": args.obs_dim,
                "act_dim": args.act_dim,
                "action_low": [-1.0] * args.act_dim,
                "action_high": [1.0] * args.act_dim,
                "max_episode_steps": args.horizon,
            }
        )
        + "\n"
    )
    out.flush()
    served = 0
    t = 0
    for line in sys.stdin:
        req = json.loads(line)
        served += 1
        if args.exit_after is not None and served > args.exit_after:
            sys.stderr.write("stub: exiting on request\n")
            return 4
        if args.bad_after is not None and served > args.bad_after:
            out.write("this is not json\n")
            out.flush()
            continue
        if req["op"] == "reset":
            t, reward, truncated = 0, 0.0, False
        elif req["op"] == "step":
            if len(req["action"]) != args.act_dim:
                sys.stderr.write(f"stub: bad action length {len(req['action'])}\n")
                return 5
            t += 1
            reward, truncated = args.reward, t >= args.horizon
        else:
            sys.stderr.write(f"stub: unknown op {req['op']!r}\n")
            return 6
        obs = [float(served)] + [0.0] * (args.obs_dim - 1)
        reply = {"id": req["id"], "obs": obs, "reward": reward, "terminated": False, "truncated": truncated}
        out.write(json.dumps(reply) + "\n")
        out.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
