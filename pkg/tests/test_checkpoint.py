import json

import numpy as np
import pytest

from convact.checkpoint import FORMAT_VERSION, Checkpoint, CheckpointError, load_model, save_model
from convact.synth import SynthProfile, synth_generate
from convact.training import Pools, TrainConfig, build_model, evaluate, fit, prepare_pools

TINY = dict(embed_dim=5, word_hidden=3, conv_hidden=3, disc_hidden=3)


@pytest.fixture(scope="module")
def trained():
    src, tgt = synth_generate(SynthProfile(substitution_rate=0.5, conversation_length=(2, 4)), 6, 1)
    cfg = TrainConfig(regime="adapt-sup", epochs=2, batch_size=3, output="crf", **TINY)
    model, ckpt, _ = fit(Pools(source=src, target_labeled=tgt[:4], dev=tgt[4:]), cfg)
    return model, ckpt, cfg, tgt


def test_round_trip_is_bit_exact(trained, tmp_path):
    model, ckpt, cfg, _ = trained
    path = tmp_path / "m.ckpt"
    ckpt.save(path)
    loaded = Checkpoint.load(path)
    assert loaded.vocab == ckpt.vocab and loaded.config == ckpt.config
    assert list(loaded.tensors) == list(ckpt.tensors)
    for name, arr in ckpt.tensors.items():
        assert loaded.tensors[name].tobytes() == arr.tobytes(), name
    assert loaded.to_bytes() == ckpt.to_bytes()


def test_rebuilt_model_predicts_identically(trained, tmp_path):
    model, ckpt, cfg, tgt = trained
    path = tmp_path / "m.ckpt"
    save_model(model, cfg, path)
    rebuilt = load_model(path)
    for name, t in model.parameters().items():
        assert rebuilt.parameters()[name].data.tobytes() == t.data.tobytes()
    assert [rebuilt.predict(c) for c in tgt] == [model.predict(c) for c in tgt]
    assert evaluate(rebuilt, tgt)[0].macro_f1 == evaluate(model, tgt)[0].macro_f1


def test_header_is_one_json_line(trained):
    _, ckpt, cfg, _ = trained
    data = ckpt.to_bytes()
    header = json.loads(data[: data.index(b"\n")])
    assert header["format_version"] == FORMAT_VERSION
    assert header["config_hash"] == cfg.config_hash()
    assert header["tags"] == ["SU", "R", "Q", "P", "ST"]
    names = [e["name"] for e in header["tensors"]]
    assert names[0] == "embed" and "crf.A" in names and any(n.startswith("disc.") for n in names)
    payload = len(data) - data.index(b"\n") - 1
    assert payload == sum(e["nbytes"] for e in header["tensors"])


def _patched(ckpt, **changes):
    data = ckpt.to_bytes()
    nl = data.index(b"\n")
    header = json.loads(data[:nl])
    header.update(changes)
    return json.dumps(header).encode() + data[nl:]


def test_version_mismatch_rejected(trained):
    with pytest.raises(CheckpointError, match="version"):
        Checkpoint.from_bytes(_patched(trained[1], format_version=FORMAT_VERSION + 1))


def test_tag_codebook_mismatch_rejected(trained):
    with pytest.raises(CheckpointError, match="codebook"):
        Checkpoint.from_bytes(_patched(trained[1], tags=["A", "B", "C", "D", "E"]))


def test_edited_config_rejected(trained):
    config = dict(trained[1].config, seed=99)
    with pytest.raises(CheckpointError, match="hash"):
        Checkpoint.from_bytes(_patched(trained[1], config=config))


def test_truncated_and_garbage_files(trained, tmp_path):
    data = trained[1].to_bytes()
    with pytest.raises(CheckpointError, match="past end"):
        Checkpoint.from_bytes(data[:-8])
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(b"no newline here")
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(b"{not json\n")
    with pytest.raises(CheckpointError):
        Checkpoint.load(tmp_path / "missing.ckpt")


def test_frozen_embeddings_stay_frozen(tmp_path):
    src, tgt = synth_generate(SynthProfile(), 3, 2)
    cfg = TrainConfig(regime="indomain", freeze_embeddings=True, **TINY)
    pools = prepare_pools(Pools(target_labeled=tgt), cfg)
    model = build_model(pools, cfg)
    save_model(model, cfg, tmp_path / "f.ckpt")
    rebuilt = load_model(tmp_path / "f.ckpt")
    assert not rebuilt.embed.trainable and "embed" not in rebuilt.trainable()
    np.testing.assert_array_equal(rebuilt.embed.matrix.data, model.embed.matrix.data)
