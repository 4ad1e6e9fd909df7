"""Paillier additively homomorphic encryption, used as a baseline.

g is fixed to n + 1, so g^m mod n^2 = 1 + m*n and encryption costs one
modular exponentiation (r^n). Big-integer arithmetic uses gmpy2.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass
from typing import Callable, Optional

import gmpy2
from cryptography.hazmat.primitives.asymmetric import rsa

from .errors import InvalidCiphertext, MessageOutOfRange


@dataclass(frozen=True)
class PublicKey:
    n: int
    n2: int

    @property
    def g(self) -> int:
        return self.n + 1

    @property
    def bits(self) -> int:
        return int(self.n).bit_length()


@dataclass(frozen=True, repr=False)
class PrivateKey:
    public: PublicKey
    lam: int
    mu: int

    def __repr__(self):
        return f"PrivateKey(bits={self.public.bits}, <redacted>)"


@dataclass(frozen=True)
class PaillierKeypair:
    public: PublicKey
    private: PrivateKey


def keypair_from_primes(p: int, q: int) -> PaillierKeypair:
    if p == q:
        raise ValueError("p and q must differ")
    n = gmpy2.mpz(p) * gmpy2.mpz(q)
    if gmpy2.gcd(n, (p - 1) * (q - 1)) != 1:
        raise ValueError("gcd(pq, (p-1)(q-1)) must be 1")
    lam = gmpy2.lcm(p - 1, q - 1)
    pk = PublicKey(n, n * n)
    # with g = n + 1, L(g^lam mod n^2) = lam mod n
    mu = gmpy2.invert(lam % n, n)
    return PaillierKeypair(pk, PrivateKey(pk, lam, mu))


def generate_keypair(bits: int = 2048) -> PaillierKeypair:
    """Modulus of ``bits`` bits from two primes of bits/2 each.

    Prime generation is borrowed from the RSA key generator; the primes are
    used only for the Paillier key.
    """
    if bits < 1024:
        # small test moduli: plain gmpy2 prime search
        while True:
            p = gmpy2.next_prime(gmpy2.mpz(secrets.randbits(bits // 2)) | (1 << (bits // 2 - 1)))
            q = gmpy2.next_prime(gmpy2.mpz(secrets.randbits(bits // 2)) | (1 << (bits // 2 - 1)))
            if p != q and (p * q).bit_length() == bits:
                return keypair_from_primes(int(p), int(q))
    nums = rsa.generate_private_key(public_exponent=65537, key_size=bits).private_numbers()
    return keypair_from_primes(nums.p, nums.q)


def _random_unit(pk: PublicKey, rng: Optional[Callable[[int], int]]) -> int:
    n = pk.n
    while True:
        r = rng(n) if rng is not None else secrets.randbelow(n)
        if r > 0 and gmpy2.gcd(r, n) == 1:
            return gmpy2.mpz(r)


def paillier_encrypt(pk: PublicKey, m: int, rng: Optional[Callable[[int], int]] = None) -> int:
    """c = g^m * r^n mod n^2. ``rng(n)`` returns an int in [0, n)."""
    if not 0 <= m < pk.n:
        raise MessageOutOfRange("message must lie in [0, n)")
    r = _random_unit(pk, rng)
    gm = (1 + gmpy2.mpz(m) * pk.n) % pk.n2
    return gm * gmpy2.powmod(r, pk.n, pk.n2) % pk.n2


def encrypt_with_noise(pk: PublicKey, m: int, rn: int) -> int:
    """Encrypt with a precomputed r^n mod n^2 (used to materialize many
    ciphertexts quickly; the noise must come from a fresh unit r)."""
    if not 0 <= m < pk.n:
        raise MessageOutOfRange("message must lie in [0, n)")
    return (1 + gmpy2.mpz(m) * pk.n) * rn % pk.n2


def _check(pk: PublicKey, c) -> None:
    if not 0 < c < pk.n2 or gmpy2.gcd(c, pk.n) != 1:
        raise InvalidCiphertext("ciphertext must be a unit modulo n^2")


def paillier_decrypt(sk: PrivateKey, c: int) -> int:
    pk = sk.public
    _check(pk, c)
    u = gmpy2.powmod(c, sk.lam, pk.n2)
    return int((u - 1) // pk.n * sk.mu % pk.n)


def paillier_add(pk: PublicKey, c1: int, c2: int) -> int:
    """E(a) * E(b) mod n^2 = E(a + b mod n)."""
    _check(pk, c1)
    _check(pk, c2)
    return c1 * c2 % pk.n2


def paillier_sum(pk: PublicKey, ciphertexts) -> int:
    """Fold paillier_add over many ciphertexts (validity assumed, as for
    values read back from the encrypted store)."""
    n2 = pk.n2
    acc = gmpy2.mpz(1)
    for c in ciphertexts:
        acc = acc * c % n2
    return acc


__all__ = [
    "PaillierKeypair",
    "PrivateKey",
    "PublicKey",
    "encrypt_with_noise",
    "generate_keypair",
    "keypair_from_primes",
    "paillier_add",
    "paillier_decrypt",
    "paillier_encrypt",
    "paillier_sum",
]
