# Serve episodes over the wire protocol and drive them with the scripted
# client adapter; transcripts land on disk for replay audits.

import tempfile
import threading

from modroute.bridge import run_client_episode, scripted_router_adapter, serve_bridge
from modroute.config import ExperimentConfig
from modroute.corpus import SyntheticConfig

config = ExperimentConfig()
config.synthetic = SyntheticConfig(n_topics=4, n_items=120, n_users=60,
                                   interactions_per_user=24, seed=7)
config.pool_size = 15
config.seeds = (1,)
config.validate()

with tempfile.TemporaryDirectory() as tmp:
    server = serve_bridge(config, "127.0.0.1", 0, n_episodes=5, transcript_dir=tmp)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    host, port = server.server_address
    print(f"episode server on {host}:{port}")

    adapter = scripted_router_adapter()
    for i in range(5):
        end = run_client_episode(host, port, adapter)
        print(f"episode {i}: return {end['reward']:+.3f}, NDCG@10 {end['ndcg10']:.3f}")

    server.shutdown()
    server.server_close()
    import os

    print("transcripts written:", sorted(os.listdir(tmp)))
    first = open(os.path.join(tmp, "ep00000.jsonl")).readline().strip()
    print("first transcript line:", first[:120], "...")
