"""Line-delimited JSON wire protocol between the episode server and external
policies, plus the canonical transcript serialization used for audit and
cross-implementation replay.

Messages, one object per line, UTF-8:
  env -> policy  {"type":"obs", "episode_id", "turn", "budget_left", "mode",
                  "pool":[{"item_id","rank","s0","summary"}...], "last": {...}|null}
  policy -> env  {"type":"act", "rationale": str, "action":{"kind","args"}}
  env -> policy  {"type":"end", "reward": float, "ndcg10": float}

`reward` in the end message is the whole-episode discounted return, so a
client can audit the penalty accounting from its own action log.
"""

from __future__ import annotations

import json

from .environment import Action, Episode, HistoryEntry, Observation, PolicyView


class ProtocolError(ValueError):
    """Message violates the wire schema."""


def dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def obs_message(view: PolicyView) -> dict:
    if view.steps:
        action, obs = view.steps[-1]
        last = {
            "action": {"kind": action.kind, "args": action.args},
            "obs_kind": obs.kind,
            "payload": obs.payload,
        }
    else:
        last = None
    pool = [
        {"item_id": iid, "rank": rank, "s0": s0, "summary": view.summaries[iid]}
        for iid, rank, s0 in sorted(view.pool.entries, key=lambda e: e[1])
    ]
    return {
        "type": "obs",
        "episode_id": view.episode_id,
        "turn": view.turn,
        "budget_left": view.turn_budget - len(view.steps),
        "mode": view.mode,
        "pool": pool,
        "last": last,
    }


def act_message(action: Action, rationale: str = "") -> dict:
    return {
        "type": "act",
        "rationale": rationale,
        "action": {"kind": action.kind, "args": action.args},
    }


def end_message(episode_return: float, ndcg10: float) -> dict:
    return {"type": "end", "reward": episode_return, "ndcg10": ndcg10}


def parse_act(obj) -> tuple[Action, str]:
    """Validate an act message; raises ProtocolError on schema violations.

    Unknown action kinds pass through untouched so the environment can apply
    the invalid-action penalty itself.
    """
    if not isinstance(obj, dict) or obj.get("type") != "act":
        raise ProtocolError("expected an act message")
    rationale = obj.get("rationale", "")
    if not isinstance(rationale, str):
        raise ProtocolError("rationale must be a string")
    action = obj.get("action")
    if not isinstance(action, dict) or not isinstance(action.get("kind"), str):
        raise ProtocolError("action must carry a string kind")
    args = action.get("args", {})
    if not isinstance(args, dict):
        raise ProtocolError("action args must be an object")
    return Action(kind=action["kind"], args=args), rationale


def parse_line(line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"not valid JSON: {exc.msg}")
    if not isinstance(obj, dict) or "type" not in obj:
        raise ProtocolError("message must be an object with a type")
    return obj


# ---- transcripts ---------------------------------------------------------------


def transcript_line(entry: HistoryEntry) -> str:
    return dumps(
        {
            "t": entry.t,
            "rationale": entry.rationale,
            "action_kind": entry.action.kind,
            "args": entry.action.args,
            "obs_kind": entry.observation.kind,
            "obs_payload": entry.observation.payload,
            "reward": entry.reward,
        }
    )


def transcript_lines(episode: Episode) -> list[str]:
    return [transcript_line(entry) for entry in episode.history]


def write_transcript(episode: Episode, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in transcript_lines(episode):
            fh.write(line + "\n")


def read_transcript(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def replay_actions(records: list[dict]) -> list[tuple[Action, str]]:
    return [
        (Action(kind=r["action_kind"], args=r["args"]), r.get("rationale", ""))
        for r in records
    ]
