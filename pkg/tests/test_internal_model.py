from __future__ import annotations

import numpy as np
import pytest

from nesim.errors import InvalidSpectrum
from nesim.internal_model import (companion_from_coeffs, default_stabilizer, im_rhs,
                                  solve_sylvester, StabilizerPair, synthesize_bank,
                                  sylvester_residual, verify_reproduction)
from nesim.numerics import symmetric_eigenvalues


class TestCompanion:
    def test_third_order_structure_and_roots(self):
        comp = companion_from_coeffs([0.0, -1.0, 0.0])
        assert np.allclose(comp.Phi, [[0, 1, 0], [0, 0, 1], [0, -1, 0]])
        assert np.allclose(comp.Gamma, [[1, 0, 0]])
        roots = np.sort_complex(np.linalg.eigvals(comp.Phi))
        assert np.allclose(sorted(roots.imag), [-1, 0, 1], atol=1e-9)
        assert np.abs(roots.real).max() < 1e-9

    def test_fifth_order_roots(self):
        comp = companion_from_coeffs([0.0, -4.0, 0.0, -5.0, 0.0])
        roots = np.linalg.eigvals(comp.Phi)
        assert np.allclose(sorted(roots.imag), [-2, -1, 0, 1, 2], atol=1e-9)
        assert np.abs(roots.real).max() < 1e-9

    def test_nonzero_real_part_rejected(self):
        with pytest.raises(InvalidSpectrum):
            companion_from_coeffs([1.0])

    def test_repeated_roots_rejected(self):
        # lambda^5 = -2 lambda^3 - lambda has a double pair at +-1j
        with pytest.raises(InvalidSpectrum):
            companion_from_coeffs([0.0, -1.0, 0.0, -2.0, 0.0])

    def test_observability_of_companion_pairs(self):
        for coeffs in ([0.0], [0.0, -1.0, 0.0], [0.0, -4.0, 0.0, -5.0, 0.0]):
            comp = companion_from_coeffs(coeffs)
            n = comp.order
            obs = np.vstack([comp.Gamma @ np.linalg.matrix_power(comp.Phi, k)
                             for k in range(n)])
            sv_min = np.sqrt(max(symmetric_eigenvalues(obs.T @ obs)[0], 0.0))
            assert sv_min > 1e-8


class TestDefaultStabilizer:
    def test_demo_preset_order3(self):
        stab = default_stabilizer(3, preset="sec5")
        assert np.allclose(stab.M[-1], [-3, -7, -5])
        assert np.allclose(stab.N, [0, 0, 1])

    def test_order5_row(self):
        stab = default_stabilizer(5, preset="sec5")
        assert np.allclose(stab.M[-1], [-120, -274, -225, -85, -15])

    def test_scalar(self):
        stab = default_stabilizer(1)
        assert np.allclose(stab.M, [[-1.0]])
        assert np.allclose(stab.N, [1.0])

    def test_plain_default_order3(self):
        stab = default_stabilizer(3)
        # (lambda+1)(lambda+2)(lambda+3)
        assert np.allclose(stab.M[-1], [-6, -11, -6])

    def test_validation(self):
        with pytest.raises(ValueError):
            StabilizerPair(M=np.array([[1.0]]), N=np.array([1.0]))  # not Hurwitz
        with pytest.raises(ValueError):
            StabilizerPair(M=-np.eye(2), N=np.array([0.0, 0.0]))  # not controllable


class TestSolveSylvester:
    def test_scalar_case(self):
        comp = companion_from_coeffs([0.0])
        T, psi = solve_sylvester(comp.Phi, comp.Gamma, np.array([[-1.0]]), np.array([1.0]))
        assert T[0, 0] == pytest.approx(1.0)
        assert psi[0] == pytest.approx(1.0)

    @pytest.mark.parametrize("coeffs,expected_psi", [
        ([0.0, -1.0, 0.0], [3.0, 6.0, 5.0]),
        ([0.0, -4.0, 0.0, -5.0, 0.0], [120.0, 270.0, 225.0, 80.0, 15.0]),
    ])
    def test_demo_preset_readout_rows(self, coeffs, expected_psi):
        comp = companion_from_coeffs(coeffs)
        stab = default_stabilizer(comp.order, preset="sec5")
        T, psi = solve_sylvester(comp.Phi, comp.Gamma, stab.M, stab.N)
        assert np.abs(psi - np.array(expected_psi)).max() < 1e-8
        resid = np.linalg.norm(T @ comp.Phi - stab.M @ T
                               - np.outer(stab.N, comp.Gamma.ravel()))
        assert resid <= 1e-10

    def test_random_synthesis_identities(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            n = int(rng.integers(1, 6))
            freqs = np.cumsum(rng.uniform(0.3, 2.0, size=n // 2))
            roots = [0.0] * (n % 2)
            for f in freqs:
                roots += [1j * f, -1j * f]
            poly = np.real(np.poly(roots))
            comp = companion_from_coeffs(-poly[1:][::-1])
            stable = -np.cumsum(rng.uniform(0.5, 2.0, size=n))
            mpoly = np.poly(stable)
            M = np.zeros((n, n))
            if n > 1:
                M[:-1, 1:] = np.eye(n - 1)
            M[-1, :] = -mpoly[1:][::-1]
            stab = StabilizerPair(M=M, N=np.eye(n)[-1])
            T, psi = solve_sylvester(comp.Phi, comp.Gamma, stab.M, stab.N)
            rhs = np.outer(stab.N, comp.Gamma.ravel())
            resid = np.linalg.norm(T @ comp.Phi - stab.M @ T - rhs)
            assert resid <= 1e-10 * (1 + np.linalg.norm(rhs))
            assert np.abs(psi @ T - comp.Gamma.ravel()).max() <= 1e-10


class TestBank:
    def test_synthesis_is_scenario_independent(self):
        polys = [[0.0, -1.0, 0.0], [0.0, -4.0, 0.0, -5.0, 0.0]]
        a = synthesize_bank(polys, 4, preset="sec5")
        b = synthesize_bank(polys, 4, preset="sec5")
        for la, lb in zip(a.levels, b.levels):
            assert np.array_equal(la.Psi, lb.Psi)
            assert np.array_equal(la.T, lb.T)

    def test_residuals_all_entries(self):
        bank = synthesize_bank([[0.0, -1.0, 0.0], [0.0, -4.0, 0.0, -5.0, 0.0]], 4,
                               preset="sec5")
        for level in bank.levels:
            for i in range(4):
                assert sylvester_residual(level, i) <= 1e-10


class TestImRhs:
    def test_zero(self):
        stab = default_stabilizer(3)
        assert np.abs(im_rhs(stab, np.zeros(3), 0.0)).max() == 0.0

    def test_scalar_value(self):
        stab = StabilizerPair(M=np.array([[-1.0]]), N=np.array([1.0]))
        assert im_rhs(stab, np.array([2.0]), 5.0)[0] == pytest.approx(3.0)

    def test_affine_in_drive(self):
        stab = default_stabilizer(3)
        eta = np.array([0.4, -1.0, 2.0])
        a, b = 1.3, -0.7
        lhs = im_rhs(stab, eta, a + b)
        rhs = im_rhs(stab, eta, a) + stab.N * b
        assert np.abs(lhs - rhs).max() < 1e-14


class TestVerifyReproduction:
    def setup_level1(self):
        comp = companion_from_coeffs([0.0, -1.0, 0.0])
        stab = default_stabilizer(3, preset="sec5")
        _, psi = solve_sylvester(comp.Phi, comp.Gamma, stab.M, stab.N)
        return comp, stab, psi

    def test_zero_signal(self):
        comp, stab, psi = self.setup_level1()
        ts = np.arange(0, 1.0, 1e-3)
        assert verify_reproduction(comp, stab, psi, ts, np.zeros_like(ts)) == 0.0

    def test_matched_modes_reproduce(self):
        comp, stab, psi = self.setup_level1()
        ts = np.arange(0, 20.0, 1e-3)
        signal = 0.8 + 0.5 * np.cos(ts) - 1.2 * np.sin(ts)
        assert verify_reproduction(comp, stab, psi, ts, signal) < 1e-5

    def test_mismatched_frequency_fails(self):
        comp, stab, psi = self.setup_level1()
        ts = np.arange(0, 20.0, 1e-3)
        signal = np.sin(1.7 * ts)
        assert verify_reproduction(comp, stab, psi, ts, signal) > 1e-2
