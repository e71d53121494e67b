# Minibatch training loop
