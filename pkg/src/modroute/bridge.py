"""TCP episode server speaking the wire protocol, and the bridge policy that
lets the environment drive an external agent.

One episode per connection. The episode stream is a pure function of the
experiment config and seed, independent of connection timing, so an external
scripted client can be replay-checked byte for byte against in-process
policies. A read timeout substitutes an invalid action; a dropped connection
aborts and excludes the episode.
"""

from __future__ import annotations

import logging
import os
import select
import socket
import socketserver
import threading
import time

import numpy as np

from .config import ExperimentConfig
from .environment import Action, Environment, FAMILIES, PolicyView, episode_return
from .experiments import CorpusBundle, make_environment, prepare_corpus
from .wire import (
    ProtocolError,
    act_message,
    dumps,
    end_message,
    obs_message,
    parse_act,
    parse_line,
    transcript_lines,
    write_transcript,
)

log = logging.getLogger("modroute.bridge")

DEFAULT_TIMEOUT = 30.0


class BridgeDisconnect(RuntimeError):
    """The external policy went away mid-episode."""


class LineChannel:
    """Newline-framed message channel with select-based read timeouts.

    Unlike socket.makefile, a timed-out read leaves the stream usable, which
    the protocol needs: a slow client costs one invalid action, not the
    episode.
    """

    def __init__(self, sock: socket.socket):
        sock.settimeout(None)
        self.sock = sock
        self._buf = b""

    def send_line(self, text: str) -> None:
        try:
            self.sock.sendall(text.encode() + b"\n")
        except OSError as exc:
            raise BridgeDisconnect(str(exc))

    def recv_line(self, timeout: float | None = None) -> str | None:
        """One line without its newline; None on EOF; TimeoutError on timeout."""
        deadline = None if timeout is None else time.monotonic() + timeout
        while b"\n" not in self._buf:
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TimeoutError("no message within timeout")
                ready, _, _ = select.select([self.sock], [], [], remaining)
                if not ready:
                    raise TimeoutError("no message within timeout")
            try:
                chunk = self.sock.recv(65536)
            except OSError as exc:
                raise BridgeDisconnect(str(exc))
            if not chunk:
                return None
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line.decode()


def bridge_act(view: PolicyView, channel: LineChannel, timeout: float = DEFAULT_TIMEOUT) -> tuple[Action, str]:
    """Serialize the policy-visible state, await one act message, validate it.

    Schema violations and timeouts degrade to an invalid action (penalized by
    the environment); a closed connection raises BridgeDisconnect.
    """
    channel.send_line(dumps(obs_message(view)))
    try:
        line = channel.recv_line(timeout)
    except TimeoutError:
        log.warning("policy reply timed out; substituting an invalid action")
        return Action("invalid", {}), ""
    if line is None:
        raise BridgeDisconnect("connection closed mid-episode")
    try:
        return parse_act(parse_line(line))
    except ProtocolError as exc:
        log.warning("schema-invalid act message: %s", exc)
        return Action("invalid", {}), ""


class BridgePolicy:
    """Adapter giving an external connection the in-process policy interface."""

    def __init__(self, channel: LineChannel, timeout: float = DEFAULT_TIMEOUT):
        self.channel = channel
        self.timeout = timeout

    def act(self, view: PolicyView, rng=None, greedy: bool = False) -> tuple[Action, str]:
        return bridge_act(view, self.channel, self.timeout)


def bridge_episode_specs(
    env: Environment, bundle: CorpusBundle, config: ExperimentConfig, n_episodes: int
):
    """Deterministic (family, user, target) stream shared by the server and
    any in-process reference run."""
    rng = np.random.default_rng([909, config.seeds[0]])
    families = config.eval.families
    specs = []
    for i in range(n_episodes):
        family = FAMILIES[families[int(rng.integers(len(families)))]]
        user, target = env.sample_pair(rng, bundle.test)
        specs.append((family, user, target))
    return specs


def _episode_id(index: int, family_id: str, user: str, target: str) -> str:
    return f"ep{index:05d}:{family_id}:{user}:{target}"


def write_reference_transcripts(
    config: ExperimentConfig, out_dir: str, n_episodes: int, policy=None
) -> list[str]:
    """Run an in-process policy over the bridge episode stream and persist
    transcripts in the exact server format (the cross-implementation oracle)."""
    from .policies import RuleRouterPolicy
    from .training import run_episode

    bundle = prepare_corpus(config)
    env = make_environment(bundle, config)
    specs = bridge_episode_specs(env, bundle, config, n_episodes)
    if policy is None:
        policy = RuleRouterPolicy()
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, (family, user, target) in enumerate(specs):
        episode = env.make_episode(
            user, target, family, split="test",
            episode_id=_episode_id(i, family.family_id, user, target),
        )
        run_episode(env, episode, policy, greedy=True)
        path = os.path.join(out_dir, f"ep{i:05d}.jsonl")
        write_transcript(episode, path)
        paths.append(path)
    return paths


class _EpisodeHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        server: EpisodeServer = self.server  # type: ignore[assignment]
        index = server.next_index()
        if index is None:
            return
        family, user, target = server.specs[index]
        env = server.env
        episode = env.make_episode(
            user, target, family, split="test",
            episode_id=_episode_id(index, family.family_id, user, target),
        )
        channel = LineChannel(self.request)
        done = False
        engaged = False
        try:
            while not done:
                action, rationale = bridge_act(episode.view(), channel, server.timeout)
                engaged = True
                _, _, done = env.step(episode, action, rationale)
            ret = episode_return(episode.history, env.reward.gamma)
            channel.send_line(dumps(end_message(ret, episode.final_ndcg10())))
        except (BridgeDisconnect, BrokenPipeError, ConnectionResetError) as exc:
            log.warning("episode %s aborted: %s", episode.episode_id, exc)
            server.aborted.append(episode.episode_id)
            if not engaged:
                # health probes and clients dying before their first action
                # should not burn a slot in the deterministic episode stream
                server.return_index(index)
            return
        if server.transcript_dir:
            path = os.path.join(server.transcript_dir, f"ep{index:05d}.jsonl")
            write_transcript(episode, path)
        server.completed.append(episode.episode_id)


class EpisodeServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(
        self,
        address: tuple[str, int],
        env: Environment,
        specs,
        transcript_dir: str | None = None,
        timeout: float = DEFAULT_TIMEOUT,
    ):
        super().__init__(address, _EpisodeHandler)
        self.env = env
        self.specs = specs
        self.transcript_dir = transcript_dir
        self.timeout = timeout
        self.completed: list[str] = []
        self.aborted: list[str] = []
        self._index = 0
        self._returned: list[int] = []
        self._lock = threading.Lock()
        if transcript_dir:
            os.makedirs(transcript_dir, exist_ok=True)

    def next_index(self) -> int | None:
        with self._lock:
            if self._returned:
                return self._returned.pop(0)
            if self._index >= len(self.specs):
                return None
            index = self._index
            self._index += 1
            return index

    def return_index(self, index: int) -> None:
        with self._lock:
            self._returned.append(index)
            self._returned.sort()


def serve_bridge(
    config: ExperimentConfig,
    host: str,
    port: int,
    n_episodes: int = 1000,
    transcript_dir: str | None = None,
    timeout: float = DEFAULT_TIMEOUT,
) -> EpisodeServer:
    """Build the server (caller runs serve_forever / shutdown)."""
    bundle = prepare_corpus(config)
    env = make_environment(bundle, config)
    specs = bridge_episode_specs(env, bundle, config, n_episodes)
    return EpisodeServer((host, port), env, specs, transcript_dir, timeout)


# ---- a minimal in-process client, used by tests and demos -----------------------


def run_client_episode(host: str, port: int, adapter, timeout: float = 30.0) -> dict | None:
    """Play one episode against a server; returns the end message or None if
    the server is out of episodes. `adapter(obs) -> act message dict`."""
    with socket.create_connection((host, port), timeout=timeout) as sock:
        reader = sock.makefile("rb")
        writer = sock.makefile("wb")
        while True:
            line = reader.readline()
            if not line:
                return None
            msg = parse_line(line.decode())
            if msg["type"] == "end":
                return msg
            reply = adapter(msg)
            writer.write((dumps(reply) + "\n").encode())
            writer.flush()


def scripted_router_adapter():
    """Mirror of the in-process rule router driven purely by obs messages."""
    from .context import EvidenceState, combine_evidence_scores
    from .policies import EQUAL_WEIGHTS

    probe_order = ("analyze_text", "retrieve_graph", "analyze_image")

    def infer_source(pool) -> str:
        summary = pool[0]["summary"]
        if summary.startswith("title="):
            return "text"
        if summary.startswith("tags="):
            return "image"
        return "graph"

    def adapter(obs: dict) -> dict:
        if obs["turn"] == 1:
            adapter.seen = []
        if obs["last"] is not None:
            last = obs["last"]
            adapter.seen.append((last["action"]["kind"], last["obs_kind"], last["payload"]))
        pool = obs["pool"]
        # obs messages only carry the latest step, so per-episode memory lives
        # in the adapter closure
        state = EvidenceState(source_modality=infer_source(pool))
        tried = set()
        for action_kind, obs_kind, payload in adapter.seen:
            state.update(action_kind, obs_kind, payload)
            tried.add(action_kind)
        for kind in probe_order:
            if kind in tried:
                continue
            if kind == "retrieve_graph":
                return act_message(Action(kind, {}))
            top = min(pool, key=lambda e: e["rank"])["item_id"]
            return act_message(Action(kind, {"item_id": top}))
        ids = [e["item_id"] for e in sorted(pool, key=lambda e: e["rank"])]
        summaries = {e["item_id"]: e["summary"] for e in pool}
        modal = state.modality_scores(ids, summaries)
        scores = combine_evidence_scores(ids, modal, EQUAL_WEIGHTS)
        return act_message(Action("score_candidates", {"scores": scores}))

    adapter.seen = []
    return adapter
