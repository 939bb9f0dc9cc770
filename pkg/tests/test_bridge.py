import json
import socket
import threading
import time

import numpy as np
import pytest

from modroute.bridge import (
    EpisodeServer,
    bridge_episode_specs,
    run_client_episode,
    scripted_router_adapter,
    serve_bridge,
    write_reference_transcripts,
)
from modroute.config import ExperimentConfig
from modroute.corpus import SyntheticConfig
from modroute.environment import Action
from modroute.wire import (
    ProtocolError,
    act_message,
    dumps,
    end_message,
    obs_message,
    parse_act,
    parse_line,
    read_transcript,
    replay_actions,
)


def _test_config(tmp_path=None, mode="auto"):
    cfg = ExperimentConfig()
    cfg.synthetic = SyntheticConfig(
        n_topics=4, n_items=80, n_users=40, interactions_per_user=16,
        vocab_per_topic=20, tag_pool_per_topic=8, noise_rate=0.2, seed=41,
    )
    cfg.pool_size = 15
    cfg.mode = mode
    cfg.seeds = (1,)
    if tmp_path is not None:
        cfg.out_dir = str(tmp_path)
    cfg.validate()
    return cfg


@pytest.fixture()
def server(tmp_path):
    cfg = _test_config(tmp_path)
    transcripts = str(tmp_path / "server_transcripts")
    srv = serve_bridge(cfg, "127.0.0.1", 0, n_episodes=60,
                       transcript_dir=transcripts, timeout=5.0)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv, cfg, transcripts
    srv.shutdown()
    srv.server_close()


class TestWireFormat:
    def test_act_round_trip_identity(self):
        action = Action("analyze_text", {"item_id": "i3"})
        msg = act_message(action, "because")
        parsed, rationale = parse_act(parse_line(dumps(msg)))
        assert parsed.kind == action.kind
        assert parsed.args == action.args
        assert rationale == "because"

    def test_end_round_trip(self):
        msg = end_message(0.42, 0.5)
        assert parse_line(dumps(msg)) == {"type": "end", "reward": 0.42, "ndcg10": 0.5}

    def test_malformed_act_rejected(self):
        with pytest.raises(ProtocolError):
            parse_act({"type": "act", "action": {"kind": 7}})
        with pytest.raises(ProtocolError):
            parse_act({"type": "obs"})
        with pytest.raises(ProtocolError):
            parse_line("{broken")

    def test_unknown_kind_passes_schema(self):
        action, _ = parse_act({"type": "act", "rationale": "", "action": {"kind": "FOO"}})
        assert action.kind == "FOO"


class TestEpisodeServer:
    def test_scripted_client_completes_episodes(self, server):
        srv, _, transcripts = server
        host, port = srv.server_address
        adapter = scripted_router_adapter()
        ends = []
        for _ in range(10):
            ends.append(run_client_episode(host, port, adapter))
        assert all(e is not None and e["type"] == "end" for e in ends)
        import os

        assert len(os.listdir(transcripts)) == 10

    def test_parity_with_in_process_router(self, server, tmp_path):
        """Cross-implementation replay oracle: byte-identical transcripts."""
        srv, cfg, transcripts = server
        host, port = srv.server_address
        adapter = scripted_router_adapter()
        n = 20
        for _ in range(n):
            assert run_client_episode(host, port, adapter) is not None
        ref_dir = str(tmp_path / "reference")
        write_reference_transcripts(cfg, ref_dir, n)
        for i in range(n):
            got = open(f"{transcripts}/ep{i:05d}.jsonl", "rb").read()
            want = open(f"{ref_dir}/ep{i:05d}.jsonl", "rb").read()
            assert got == want, f"episode {i} transcripts diverge"

    def test_unknown_kind_penalized_in_accounting(self, server):
        srv, _, _ = server
        host, port = srv.server_address

        def adapter(obs):
            if obs["turn"] == 1:
                return {"type": "act", "rationale": "", "action": {"kind": "FOO", "args": {}}}
            return act_message(Action("score_candidates", {"scores": {}}))

        end = run_client_episode(host, port, adapter)
        # return = lambda_invalid + ndcg of the first-stage fallback ranking
        assert end["reward"] == pytest.approx(-0.20 + end["ndcg10"])

    def test_auto_mode_ask_user_rejected(self, server):
        srv, _, _ = server
        host, port = srv.server_address

        def adapter(obs):
            assert obs["mode"] == "auto"
            if obs["turn"] == 1:
                return act_message(Action("ask_user", {"modality": "text", "query": ""}))
            return act_message(Action("score_candidates", {"scores": {}}))

        end = run_client_episode(host, port, adapter)
        assert end["reward"] == pytest.approx(-0.20 + end["ndcg10"])

    def test_disconnect_mid_episode_excluded_and_server_survives(self, server):
        srv, _, _ = server
        host, port = srv.server_address
        with socket.create_connection((host, port), timeout=5.0) as sock:
            reader = sock.makefile("rb")
            line = reader.readline()
            assert json.loads(line)["type"] == "obs"
            reader.close()
            sock.shutdown(socket.SHUT_RDWR)  # drop the connection mid-episode
        time.sleep(0.3)
        assert len(srv.aborted) == 1
        end = run_client_episode(host, port, scripted_router_adapter())
        assert end is not None

    def test_timeout_injects_invalid_action(self, tmp_path):
        cfg = _test_config(tmp_path)
        srv = serve_bridge(cfg, "127.0.0.1", 0, n_episodes=5, timeout=0.5)
        thread = threading.Thread(target=srv.serve_forever, daemon=True)
        thread.start()
        try:
            host, port = srv.server_address
            with socket.create_connection((host, port), timeout=5.0) as sock:
                reader = sock.makefile("rb")
                writer = sock.makefile("wb")
                first = json.loads(reader.readline())
                assert first["turn"] == 1
                time.sleep(0.9)  # past the server timeout; send nothing
                second = json.loads(reader.readline())
                assert second["turn"] == 2
                assert second["last"]["action"]["kind"] == "invalid"
                assert second["last"]["obs_kind"] == "null"
                writer.write((dumps(act_message(
                    Action("score_candidates", {"scores": {}}))) + "\n").encode())
                writer.flush()
                end = json.loads(reader.readline())
                assert end["type"] == "end"
                assert end["reward"] == pytest.approx(-0.20 + end["ndcg10"])
        finally:
            srv.shutdown()
            srv.server_close()

    def test_transcript_replay_reproduces_rewards(self, server, tmp_path):
        from modroute.experiments import make_environment, prepare_corpus
        from modroute.bridge import _episode_id

        srv, cfg, transcripts = server
        host, port = srv.server_address
        adapter = scripted_router_adapter()
        for _ in range(3):
            run_client_episode(host, port, adapter)
        bundle = prepare_corpus(cfg)
        env = make_environment(bundle, cfg)
        specs = bridge_episode_specs(env, bundle, cfg, 3)
        for i, (family, user, target) in enumerate(specs):
            records = read_transcript(f"{transcripts}/ep{i:05d}.jsonl")
            episode = env.make_episode(
                user, target, family, split="test",
                episode_id=_episode_id(i, family.family_id, user, target),
            )
            for record, (action, rationale) in zip(records, replay_actions(records)):
                _, reward, _ = env.step(episode, action, rationale)
                assert reward == pytest.approx(record["reward"])


class TestObsMessage:
    def test_schema_fields(self, server):
        srv, cfg, _ = server
        from modroute.experiments import make_environment, prepare_corpus

        bundle = prepare_corpus(cfg)
        env = make_environment(bundle, cfg)
        specs = bridge_episode_specs(env, bundle, cfg, 1)
        family, user, target = specs[0]
        ep = env.make_episode(user, target, family, split="test")
        msg = obs_message(ep.view())
        assert msg["type"] == "obs"
        assert msg["turn"] == 1 and msg["budget_left"] == 8
        assert msg["mode"] == "auto"
        assert msg["last"] is None
        assert len(msg["pool"]) == cfg.pool_size
        entry = msg["pool"][0]
        assert set(entry) == {"item_id", "rank", "s0", "summary"}
        assert [e["rank"] for e in msg["pool"]] == list(range(1, cfg.pool_size + 1))
