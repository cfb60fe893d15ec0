from hubforge.backends import ThresholdMaskBackend


def create_backend():
    return ThresholdMaskBackend()
