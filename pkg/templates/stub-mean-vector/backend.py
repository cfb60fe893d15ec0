from hubforge.backends import MeanVectorBackend


def create_backend():
    return MeanVectorBackend()
