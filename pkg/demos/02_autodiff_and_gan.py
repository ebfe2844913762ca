"""The numpy autodiff core, checked by hand, then a few GAN epochs.

Run: python3 demos/02_autodiff_and_gan.py
"""

import numpy as np

from sopanomaly import gan
from sopanomaly import nncore as nn

rng = np.random.default_rng(0)

# d/dx sum(tanh(x * w)) = w * (1 - tanh^2)
x = nn.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
w = nn.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
loss = nn.reduce_sum(nn.tanh(x * w))
gx, gw = nn.backward(loss, [x, w])
print("max |analytic - closed form|:", np.abs(gx - w.data * (1 - np.tanh(x.data * w.data) ** 2)).max())

# transposed convolution is the adjoint of convolution: <conv(a), b> == <a, convT(b)>
k = rng.normal(size=(4, 2, 4, 4))
a = rng.normal(size=(1, 2, 8, 8))
b = rng.normal(size=(1, 4, 4, 4))
lhs = np.sum(nn.conv2d(nn.Tensor(a), nn.Tensor(k), None, 2, 1).data * b)
rhs = np.sum(a * nn.conv2d_transpose(nn.Tensor(b), nn.Tensor(k), None, 2, 1).data)
print("adjoint identity:", lhs, rhs)

# a small DCGAN on 16x16 blobs
yy, xx = np.mgrid[0:16, 0:16]
centres = rng.uniform(4, 12, size=(128, 2))
data = np.stack([np.tanh(3 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 10) - 1) for cy, cx in centres])[:, None]

model = gan.build_model(latent_dim=8, image_shape=(1, 16, 16), base_channels=8, seed=1)
model, history = gan.train(model, data, gan.TrainConfig(epochs=10, batch_size=32, seed=1),
                           progress=lambda e, d, g: print(f"epoch {e}: d_loss {d:.3f} g_loss {g:.3f}"))

samples = model.generate(gan.sample_noise(rng, 4, 8))
print("sample range", samples.min().round(3), samples.max().round(3))
