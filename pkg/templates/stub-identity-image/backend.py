from hubforge.backends import IdentityImageBackend


def create_backend():
    return IdentityImageBackend()
