# %% [markdown]
# # From usage logs to next-app rankings
#
# Synthesise a week of logs, cut them into windows of four events, train a
# narrow model for a few epochs and compare it with always predicting the
# most frequent app. The full-size run is `app all`; this one finishes in seconds.

# %%
import numpy as np

from appformer.data import SynthConfig, synth_corpus
from appformer.model import ModelConfig, TrainConfig
from appformer.pipeline import run_variant
from appformer.preprocess import prepare

records, poi, _ = synth_corpus(SynthConfig())
prep = prepare(records, "paulci", 4, stations=sorted(poi))
print(len(records), "records ->", {p: len(getattr(prep, p)) for p in ("train", "val", "test")}, "windows")
w = prep.train[0]
print("first window:", w.app_ids, "->", w.label_app_id, "at stations", w.station_ids)

# %% a small model, a handful of epochs
narrow = ModelConfig(d_app=32, d_model=64, num_heads=4, d_ff=128)
res = run_variant(prep, poi, narrow, TrainConfig(epochs=5), "kmodes", 5, seed=0, log=lambda r: print(r["epoch"], round(r["train_loss"], 3), r.get("val", {}).get("hit@1")))
print("test:", {k: round(v, 3) for k, v in res.reports["test"].row().items()})
print("most-frequent baseline Hit@1:", round(res.baseline_hit1, 3))

# %% what the model ranks first for a few test windows
arrays = prep.vocab.encode(prep.test[:5])
top = np.argsort(-res.model.predict_logits(arrays), axis=1)[:, :3]
for win, row in zip(prep.test[:5], top):
    print(win.app_ids, "-> true", win.label_app_id, "| top-3", [prep.vocab.apps[i] for i in row])
