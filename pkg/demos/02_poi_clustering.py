# %% [markdown]
# # Clustering base stations by their POI counts
#
# The synthetic corpus plants five POI prototypes. K-Modes compares count
# vectors symbol by symbol; the K-Means family treats them as points in R^17.

# %%
import numpy as np
from sklearn.metrics import adjusted_rand_score

from appformer.clustering import ALGORITHMS, fit_poi, pca_project, poi_matrix
from appformer.data import POI_CATEGORIES, SynthConfig, synth_corpus

_, poi, truth_doc = synth_corpus(SynthConfig())
ids, X = poi_matrix(poi)
truth = [truth_doc["station_cluster"][str(s)] for s in ids]
print(len(ids), "stations x", len(POI_CATEGORIES), "categories")
print("prototype 0:", dict(zip(POI_CATEGORIES, truth_doc["prototypes"][0])))

# %% agreement with the planted clusters, three seeds each
for algo in ALGORITHMS:
    scores = [adjusted_rand_score(truth, fit_poi(poi, algo, 5, seed=s).labels) for s in range(3)]
    print(f"{algo:>17}: ARI {np.round(scores, 3)}")

# %% a K-Modes center is itself a plausible count vector
m = fit_poi(poi, "kmodes", 5, seed=0)
print("center 0:", m.centers[0].astype(int))
print("cost per iteration:", m.cost_history)

# %% two principal components for plotting
pca = pca_project(X.astype(float))
print("explained variance:", np.round(pca.explained_variance, 2))
for c in range(5):
    pts = pca.coords[m.labels == c]
    print(f"cluster {c}: {len(pts):2d} stations around ({pts[:, 0].mean():6.2f}, {pts[:, 1].mean():6.2f})")
