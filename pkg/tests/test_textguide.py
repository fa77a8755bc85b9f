import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icanim.backbone.text import ByteTextEncoder, PAD_ID
from icanim.data import make_clip
from icanim.errors import GuidanceError, ParameterError
from icanim.skeleton.sprites import Character
from icanim.textguide import (
    FixtureClient,
    GuidanceClientConfig,
    HttpGuidanceClient,
    PromptCache,
    RecordingClient,
    TemplateClient,
    build_prompt,
    describe_appearance,
    describe_motion,
    embed_text,
    fuse_prompt,
    rephrase_motion,
    request_key,
    sample_frames,
)


@pytest.fixture(scope="module")
def wave_clip():
    return make_clip(5, num_frames=17, height=48, width=48, family="wave",
                     character=Character("red", "navy", 2.5))


class _Echo:
    """Stand-in remote service answering from a fixed table."""

    name = "echo"

    def __init__(self, table):
        self.table = table
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        return self.table[request["task"]]


def test_template_outputs(wave_clip):
    assert describe_motion(wave_clip.video, hint="wave") == "a figure is waving its arm"
    assert describe_motion(wave_clip.video) == "a figure is moving"
    # appearance from the sprite's pixels alone
    assert describe_appearance(wave_clip.video[0]) == "a red stick figure"
    assert describe_appearance(wave_clip.video[0], hint="blue") == "a blue stick figure"
    flat = np.full((16, 16, 3), 0.2, np.float32)
    assert describe_appearance(flat) == "a stick figure"


def test_fuse_template_grammar():
    assert rephrase_motion("a person is waving both hands") == "is waving both hands"
    assert rephrase_motion("jumping") == "jumping"
    fused = fuse_prompt("a person is waving both hands", "a gray bird with colorful feathers")
    assert fused == "a gray bird with colorful feathers, is waving both hands"
    assert "bird" in fused and "waving" in fused
    with pytest.raises(ParameterError):
        fuse_prompt("", "a cat")
    with pytest.raises(ParameterError):
        fuse_prompt("a cat is running", "  ")


def test_sample_frames_even_spacing():
    v = np.arange(17)[:, None, None, None] * np.ones((1, 2, 2, 3))
    idx = sample_frames(v)[:, 0, 0, 0].astype(int).tolist()
    assert idx == [0, 2, 5, 7, 9, 11, 14, 16]
    assert len(sample_frames(v[:3])) == 3
    with pytest.raises(ParameterError):
        sample_frames(v[:0])


def test_fixture_replay_byte_exact(tmp_path, wave_clip):
    remote = _Echo({"motion": "a dancer is spinning slowly é",
                    "appearance": "a red stick figure on navy",
                    "fuse": "a red stick figure on navy, is spinning slowly é"})
    rec = RecordingClient(remote)
    live = build_prompt(wave_clip.video, wave_clip.video[0], rec, degrade=False)
    rec.dump(tmp_path / "fx.json")
    replay = build_prompt(wave_clip.video, wave_clip.video[0],
                          FixtureClient(tmp_path / "fx.json"), degrade=False)
    assert replay.fused_text.encode() == live.fused_text.encode()
    assert replay.motion_text == live.motion_text and replay.provenance == "fixture"
    assert describe_motion(wave_clip.video, FixtureClient(tmp_path / "fx.json")) == live.motion_text
    with pytest.raises(GuidanceError):
        describe_motion(wave_clip.video[:3], FixtureClient(tmp_path / "fx.json"))


def test_empty_response_raises_or_degrades(wave_clip):
    empty = _Echo({"motion": "", "appearance": "", "fuse": ""})
    with pytest.raises(GuidanceError):
        describe_motion(wave_clip.video, empty)
    with pytest.raises(GuidanceError):
        FixtureClient({request_key({"task": "x"}): " "}).complete({"task": "x"})
    text = describe_motion(wave_clip.video, empty, hint="wave", degrade=True)
    assert text == "a figure is waving its arm"


def test_http_client_retries_then_errors():
    calls = []

    def flaky(url, payload, headers, timeout):
        calls.append(timeout)
        raise TimeoutError("slow")

    client = HttpGuidanceClient(GuidanceClientConfig(retries=2, timeout=0.5), transport=flaky)
    with pytest.raises(GuidanceError) as err:
        client.complete({"task": "motion", "frames": []})
    assert err.value.retries == 2 and len(calls) == 3 and calls == [0.5] * 3

    def empty(url, payload, headers, timeout):
        return {"text": ""}

    with pytest.raises(GuidanceError):
        HttpGuidanceClient(GuidanceClientConfig(), transport=empty).complete({"task": "fuse"})
    with pytest.raises(ParameterError):
        GuidanceClientConfig(timeout=0)


def test_http_client_cache_auth_and_inflight_cap(tmp_path, monkeypatch):
    monkeypatch.setenv("ICANIM_GUIDANCE_TOKEN", "s3cret")
    seen, active, peak = [], [0], [0]
    lock = threading.Lock()

    def transport(url, payload, headers, timeout):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        seen.append((payload, headers))
        threading.Event().wait(0.01)
        with lock:
            active[0] -= 1
        return {"text": f"ok {payload['text']}"}

    cfg = GuidanceClientConfig(cache_dir=str(tmp_path), max_in_flight=2)
    client = HttpGuidanceClient(cfg, transport)
    assert client.complete({"task": "fuse", "text": "a"}) == "ok a"
    assert seen[0][1]["Authorization"] == "Bearer s3cret" and seen[0][0]["model"] == cfg.model
    key = request_key({"model": cfg.model, "task": "fuse", "text": "a"})
    assert (tmp_path / key[:2] / f"{key}.json").is_file()
    assert client.complete({"task": "fuse", "text": "a"}) == "ok a" and len(seen) == 1
    threads = [threading.Thread(target=client.complete, args=({"task": "fuse", "text": str(i)},))
               for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(seen) == 9 and peak[0] <= 2


def test_prompt_cache_per_pair(wave_clip):
    remote = _Echo({"motion": "m is x", "appearance": "a", "fuse": "a, is x"})
    cache = PromptCache(remote)
    a = cache.get(wave_clip.video, wave_clip.video[0])
    b = cache.get(wave_clip.video.copy(), wave_clip.video[0].copy())
    assert a is b and remote.calls == 3
    cache.get(wave_clip.video, wave_clip.video[1])
    assert remote.calls == 6


def test_template_client_unknown_task():
    with pytest.raises(ParameterError):
        TemplateClient().complete({"task": "summarize"})


def test_embed_text_contract():
    enc = ByteTextEncoder(8, max_len=16)
    assert embed_text("", enc).ids.tolist() == [[PAD_ID]]
    a, b = embed_text("a red stick figure", enc), embed_text("a red stick figure", enc)
    assert np.array_equal(a.embeddings.numpy(), b.embeddings.numpy())
    assert embed_text("x" * 40, enc).ids.shape[1] == 16


@settings(max_examples=50, deadline=None)
@given(st.text(min_size=1, max_size=40).filter(str.strip),
       st.text(min_size=1, max_size=40).filter(str.strip))
def test_fused_nonempty_and_deterministic(motion, appearance):
    fused = fuse_prompt(motion, appearance)
    assert fused.strip() and fused == fuse_prompt(motion, appearance)
    assert fused.startswith(appearance + ", ")
