"""Independent full-Hilbert-space reference built from Kronecker products of Pauli matrices.

Site ``i`` is bit ``i`` of the basis index; ``|1>`` is an occupied site.
"""
import numpy as np
from scipy.linalg import expm

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
N = np.array([[0, 0], [0, 1]], dtype=complex)


def site_op(op, i, n):
    out = np.array([[1.0 + 0j]])
    for k in reversed(range(n)):
        out = np.kron(out, op if k == i else I2)
    return out


def string(n, **ops):
    """``string(n, X=(0, 2), Y=(1,))`` -> product operator."""
    mats = {"X": X, "Y": Y, "Z": Z, "N": N}
    out = np.eye(2 ** n, dtype=complex)
    for name, sites in ops.items():
        for s in sites:
            out = out @ site_op(mats[name], s, n)
    return out


def hamiltonian(h):
    """Dense matrix of a SpinHamiltonian from its term arrays."""
    lat = h.lattice
    n = lat.n_sites
    H = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for i in range(n):
        H += h.onsite[i] * site_op(N, i, n)
    for b, (i, j) in enumerate(lat.bonds):
        xxyy = 0.5 * (string(n, X=(i, j)) + string(n, Y=(i, j)))
        H += h.hop[b] * xxyy
        H += h.nn_density[b] * site_op(N, i, n) @ site_op(N, j, n)
    for q, (i, j, k) in enumerate(lat.triples):
        xx = 0.5 * (string(n, X=(i, k)) + string(n, Y=(i, k)))
        nj = site_op(N, j, n)
        H += h.xnx[q] * nj @ xx + h.xix[q] * xx
        for a, c in ((i, k), (k, i)):
            hop_jc = 0.5 * (string(n, X=(j, c)) + string(n, Y=(j, c)))
            H += h.nxx[q] * site_op(N, a, n) @ hop_jc
    return H


def embed(psi):
    """Sector amplitudes -> full 2^n vector."""
    full = np.zeros(2 ** psi.basis.n_q, dtype=complex)
    full[psi.basis.states] = psi.amplitudes
    return full


def restrict(full, basis):
    return full[basis.states]


def evolve(H, full, t):
    return expm(-1j * t * H) @ full


def sparse_hamiltonian(h):
    """Same operator as :func:`hamiltonian`, assembled with sparse Kronecker products (n <= 16)."""
    from functools import reduce

    from scipy import sparse

    lat = h.lattice
    n = lat.n_sites
    eye = sparse.identity(2, dtype=complex, format="csr")
    cache = {}

    def op(m, i):
        key = (id(m), i)
        if key not in cache:
            mats = [sparse.csr_matrix(m) if k == i else eye for k in reversed(range(n))]
            cache[key] = reduce(lambda a, b: sparse.kron(a, b, format="csr"), mats)
        return cache[key]

    def hop(i, j):
        return 0.5 * (op(X, i) @ op(X, j) + op(Y, i) @ op(Y, j))

    H = sparse.csr_matrix((2 ** n, 2 ** n), dtype=complex)
    for i in range(n):
        H = H + h.onsite[i] * op(N, i)
    for b, (i, j) in enumerate(lat.bonds):
        H = H + h.hop[b] * hop(i, j) + h.nn_density[b] * op(N, i) @ op(N, j)
    for q, (i, j, k) in enumerate(lat.triples):
        if h.xnx[q] or h.xix[q]:
            H = H + h.xnx[q] * op(N, j) @ hop(i, k) + h.xix[q] * hop(i, k)
        if h.nxx[q]:
            for a, c in ((i, k), (k, i)):
                H = H + h.nxx[q] * op(N, a) @ hop(j, c)
    return H.tocsr()


def sector_matrix(h, basis, dense=True):
    """Oracle Hamiltonian restricted to a fixed-excitation sector."""
    H = sparse_hamiltonian(h)[basis.states][:, basis.states]
    return H.toarray() if dense else H.tocsr()
