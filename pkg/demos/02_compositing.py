"""How slot silhouettes become per-pixel layer weights.

Objects are painted front to back: a slot owns a pixel in proportion to its
silhouette times the uncovered remainder left by every slot in front of it,
and the background gets whatever nobody covers.  The depth order is discrete,
so training uses a straight-through trick: the forward pass keeps the exact
ordered product, the backward pass differentiates a softmax-weighted stand-in.

    python demos/02_compositing.py
"""

import torch

from ocloc.decoder import exact_layer_weights, layer_weights, surrogate_layer_weights

torch.set_printoptions(precision=3, sci_mode=False)

# two overlapping slots over five pixels
s = torch.tensor([[0.0, 0.9, 0.9, 0.9, 0.0],
                  [0.0, 0.0, 0.8, 0.8, 0.8]])
for o in ([1.0, 0.0], [0.0, 1.0]):
    o = torch.tensor(o)
    print(f"depth scores {o.tolist()} (larger is nearer)")
    print("  exact weights (rows: background, slot 1, slot 2)\n", exact_layer_weights(s, o))
    print("  columns sum to", exact_layer_weights(s, o).sum(0))

# the forward value is piecewise constant in o, so all of o's gradient comes
# from the surrogate
s = s.clone().requires_grad_()
o = torch.tensor([1.0, 0.0], requires_grad=True)
target = torch.zeros(3, 5)
target[2, 2:4] = 1.0   # we would like slot 2 in front on the shared pixels
w = layer_weights(s, o)
loss = ((w - target) ** 2).sum()
loss.backward()
print("straight-through forward equals exact:", torch.equal(w.detach(), exact_layer_weights(s.detach(), o.detach())))
print("gradient on depth scores:", o.grad, "(pushes slot 2 forward)")
print("surrogate weights at this point\n", surrogate_layer_weights(s.detach(), o.detach()))
