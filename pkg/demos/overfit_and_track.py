"""
Overfit one synthetic clip, then track it
=========================================

Training on a single clip is a smoke test, not a benchmark: if the loss
cannot collapse and the tracker cannot follow the target it was trained
on, something upstream is broken.  The first argument sets the number of
steps (default 320, a bit over three minutes on one core).  The learning
rate drops tenfold for the last fifth, which is what keeps the tracker
from flip-flopping between a good and a lost state.
"""

import sys
import tempfile
from pathlib import Path

from smat.data import PairConfig, SynthConfig, synth_sequence
from smat.export import export_attention_maps
from smat.metrics import compute_metrics
from smat.model import ModelConfig
from smat.tracker import Tracker
from smat.train import TrainConfig, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 320
seq = synth_sequence(SynthConfig(seed=1))
print(f"clip: {len(seq)} frames of {seq.frames.shape[2]}x{seq.frames.shape[1]}")

cfg = TrainConfig(batch_size=8, epochs=1, samples_per_epoch=8 * steps, lr_drop_at=0.8,
                  pairs=PairConfig(template_from_first=True, center_jitter=0.4, scale_jitter=0.1))
result = train(cfg, seq, ModelConfig(),
               callback=lambda r: r.step % 25 == 0 and print(f"step {r.step:4d}  L_total {r.loss.total:.3f}"))
print(f"{len(result.history)} steps in {result.seconds:.0f}s, "
      f"L_total {result.losses[0]:.2f} -> {result.losses[-10:].mean():.3f}")

# %%
# Track with the first-frame template and a Hanning window on the score map.
tracker = Tracker(result.model)
state = tracker.init(seq.frames[0], seq.box(0))
boxes = [seq.box(0)]
for frame in seq.frames[1:]:
    boxes.append(tracker.track_frame(state, frame, capture=True))
m = compute_metrics([boxes], [seq.boxes])
print(f"AO {m.ao:.3f}  SR50 {m.sr050:.2f}  SR75 {m.sr075:.2f}  P {m.p:.2f}")

out = Path(tempfile.mkdtemp(prefix="smat_attn_"))
for p in export_attention_maps(state.traces, out):
    print("wrote", p)
