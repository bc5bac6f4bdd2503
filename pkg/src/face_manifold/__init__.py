"""Denoising autoencoders that project morphable-model parameters onto the face manifold.

Modules:
    morphable_model  linear face model, sampling, .fmm files, OBJ export
    dataset          clean/noisy pair generation, splits, .fds files
    tensor_nn        1D conv / pooling / ReLU / MSE kernels and Adam
    autoencoder      the 8-layer network, batched forward/backward, .fwt files
    trainer          mini-batch training loop and MSE evaluation
    evaluator        noise sweeps, synthetic generation, covariance trace, PCA
    cli              ``face-manifold`` command-line front end
"""
__version__ = "0.1.0"
