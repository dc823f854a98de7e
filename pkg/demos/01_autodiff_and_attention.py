# %% [markdown]
# # The tensor core and one fusion block
#
# Everything in the model runs on a float64 reverse-mode autodiff core.
# This walk-through checks a gradient by hand and looks at what the causal
# mask does to attention weights.

# %%
import numpy as np

from appformer.fusion import CrossModalFusion, FusionConfig, multi_head_attention
from appformer.tensor import Tensor, causal_mask, layer_norm, numerical_gradient, relative_error, tsum

rng = np.random.default_rng(0)

# %% a layer norm, differentiated both ways
x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
gamma, beta = Tensor(np.ones(5)), Tensor(np.zeros(5))
w = rng.normal(size=(3, 5))
out = tsum(layer_norm(x, gamma, beta) * Tensor(w))
out.backward()


def f():
    return float((layer_norm(Tensor(x.data), gamma, beta).data * w).sum())


print("layer norm grad rel err:", relative_error(x.grad, numerical_gradient(f, x.data)))

# %% causal attention weights are lower triangular
seq = Tensor(rng.normal(size=(1, 5, 8)))
eye = Tensor(np.eye(8))
kept = []
multi_head_attention(seq, seq, eye, eye, eye, 2, causal_mask(5), 0.0, False, None, keep_weights=kept)
np.set_printoptions(precision=3, suppress=True)
print(kept[0][0, 0])
print("row sums:", kept[0].sum(-1).ravel())

# %% one fusion block: apps as queries, POI context as keys and values
block = CrossModalFusion(FusionConfig(d_model=8, num_heads=2, d_ff=16, dropout=0.0), rng)
apps, poi = Tensor(rng.normal(size=(2, 4, 8))), Tensor(rng.normal(size=(2, 4, 8)))
trace = {}
fused = block(apps, poi, trace=trace)
print("fused:", fused.shape, "| stages:", sorted(trace))

# nudging the last app leaves the first three outputs untouched
apps2 = Tensor(apps.data.copy())
apps2.data[:, 3] += 1.0
print("earlier positions unchanged:", np.array_equal(block(apps2, poi).data[:, :3], fused.data[:, :3]))
