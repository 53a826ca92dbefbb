"""Binary checkpoint container.

Layout (all integers unsigned little-endian, all reals little-endian float64)::

    magic        8 bytes   b"VDCKPT\\x00\\x01"
    version      u32       currently 1
    step         u64       gradient steps taken
    config_hash  32 bytes  SHA-256 of the run configuration
    config_len   u32       length of the JSON config that follows
    config       bytes     UTF-8 JSON (sorted keys)
    n_blocks     u32
    n_blocks x:
        name_len u32, name (UTF-8), count u64, count x float64

Blocks: ``critic.online.{0,1}``, ``critic.target.{0,1}``, ``policy``,
``log_alpha``, and for every optimizer ``<opt>.m``, ``<opt>.v``, ``<opt>.t``
where ``<opt>`` is ``opt.critic.{0,1}``, ``opt.policy`` or ``opt.alpha``.
"""

import io
import json
import struct

import numpy as np

from .approximator import AdamState
from .config import from_dict
from .sacd import make_trainer_state

MAGIC = b"VDCKPT\x00\x01"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _blocks(state):
    out = {}
    for i in range(2):
        out[f"critic.online.{i}"] = state.critic.online[i]
        out[f"critic.target.{i}"] = state.critic.target[i]
    out["policy"] = state.policy.params
    out["log_alpha"] = np.array([state.log_alpha])
    opts = {"opt.critic.0": state.critic_opt[0], "opt.critic.1": state.critic_opt[1], "opt.policy": state.policy_opt, "opt.alpha": state.alpha_opt}
    for name, opt in opts.items():
        out[f"{name}.m"] = opt.m
        out[f"{name}.v"] = opt.v
        out[f"{name}.t"] = np.array([float(opt.t)])
    return out


def dumps(state, config):
    cfg_json = json.dumps(config.to_dict(), sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", VERSION, state.step))
    buf.write(bytes.fromhex(config.hash()))
    buf.write(struct.pack("<I", len(cfg_json)))
    buf.write(cfg_json)
    blocks = _blocks(state)
    buf.write(struct.pack("<I", len(blocks)))
    for name, arr in blocks.items():
        raw = name.encode()
        data = np.ascontiguousarray(arr, dtype="<f8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<Q", data.size))
        buf.write(data.tobytes())
    return buf.getvalue()


def save(path, state, config):
    data = dumps(state, config)
    with open(path, "wb") as fh:
        fh.write(data)
    return path


def loads(data, expected_hash=None):
    """Rebuild ``(TrainerState, RunConfig)`` from checkpoint bytes."""
    view = memoryview(data)
    if bytes(view[:8]) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = 8
    version, step = struct.unpack_from("<IQ", view, pos)
    pos += 12
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    stored_hash = bytes(view[pos : pos + 32]).hex()
    pos += 32
    (n,) = struct.unpack_from("<I", view, pos)
    pos += 4
    config = from_dict(json.loads(bytes(view[pos : pos + n])))
    pos += n
    if config.hash() != stored_hash:
        raise CheckpointError("embedded configuration does not match the stored config hash")
    if expected_hash is not None and expected_hash != stored_hash:
        raise CheckpointError("checkpoint was written for a different configuration")
    (n_blocks,) = struct.unpack_from("<I", view, pos)
    pos += 4
    blocks = {}
    for _ in range(n_blocks):
        (ln,) = struct.unpack_from("<I", view, pos)
        pos += 4
        name = bytes(view[pos : pos + ln]).decode()
        pos += ln
        (count,) = struct.unpack_from("<Q", view, pos)
        pos += 8
        blocks[name] = np.frombuffer(view[pos : pos + 8 * count], dtype="<f8").astype(np.float64)
        pos += 8 * count
    if pos != len(view):
        raise CheckpointError("trailing bytes after the last block")

    env = config.make_env()
    state = make_trainer_state(config.agent, config.components, env.obs_dim, env.action_dim, np.random.SeedSequence(0))
    _restore(state, blocks)
    state.step = step
    return state, config


def load(path, expected_hash=None):
    with open(path, "rb") as fh:
        return loads(fh.read(), expected_hash)


def _take(blocks, name, size):
    try:
        arr = blocks[name]
    except KeyError:
        raise CheckpointError(f"missing block {name!r}") from None
    if arr.size != size:
        raise CheckpointError(f"block {name!r} has {arr.size} values, expected {size}")
    return arr.copy()


def _restore(state, blocks):
    n_c = state.critic.spec.n_params
    n_p = state.policy.spec.n_params
    for i in range(2):
        state.critic.online[i] = _take(blocks, f"critic.online.{i}", n_c)
        state.critic.target[i] = _take(blocks, f"critic.target.{i}", n_c)
    state.policy.params = _take(blocks, "policy", n_p)
    state.log_alpha = float(_take(blocks, "log_alpha", 1)[0])

    def opt(name, size):
        return AdamState(_take(blocks, f"{name}.m", size), _take(blocks, f"{name}.v", size), int(_take(blocks, f"{name}.t", 1)[0]))

    state.critic_opt = [opt("opt.critic.0", n_c), opt("opt.critic.1", n_c)]
    state.policy_opt = opt("opt.policy", n_p)
    state.alpha_opt = opt("opt.alpha", 1)
