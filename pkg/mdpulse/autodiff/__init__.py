# Dense tensors with reverse-mode gradients
