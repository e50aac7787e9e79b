import hashlib


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from an ordered tuple of labels (global seed, stage, ids...)."""
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


def episode_seed(global_seed: int, physics_fingerprint: str, test_id: str) -> int:
    # independent of the stage that runs the episode, so migration back to the
    # source simulator and replay both reproduce the original execution
    return derive_seed(global_seed, "episode", physics_fingerprint, test_id)
