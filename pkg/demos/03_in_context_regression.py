# coding: utf-8

# # In-context regression with a hand-wired model
#
# The model has no training loop: predictions come from attending over the
# training rows. `init_tilt_weights` wires one attention head so that test
# rows weight training labels by feature similarity, which is enough to fit
# a linear target from context alone.

# In[1]:

import numpy as np

from tilepfn import ModelConfig, TabularTask, TileConfig, forward, init_tilt_weights

rng = np.random.default_rng(0)
p = 4
coef = rng.standard_normal(p)
X = rng.standard_normal((1100, p))
y = X @ coef


# One set of weights, several context sizes. More training rows should give
# a better fit.

# In[2]:

w = init_tilt_weights(ModelConfig(num_classes=None, num_layers=1), num_features=p)
X_test, y_test = X[1000:], y[1000:]
for n in (8, 64, 256, 1000):
    task = TabularTask(X[:n], y[:n], X_test)
    pred = forward(task, w, TileConfig(128, 256)).mean
    print("n=%-5d rmse %.3f  (target std %.3f)"
          % (n, np.sqrt(np.mean((pred - y_test) ** 2)), y_test.std()))


# Monolithic attention (tiles=None) and tiled attention agree.

# In[3]:

task = TabularTask(X[:1000], y[:1000], X_test)
a = forward(task, w, None).mean
b = forward(task, w, TileConfig(16, 32, 1)).mean
print("max |mono - tiled| = %.2e" % np.max(np.abs(a - b)))
