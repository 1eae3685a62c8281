"""The staged hierarchical transform of movable coordinates, with its adjoint.

Stage order:

1. per-atom translation ``r + atom_disp``;
2. anchored micro-groups rotate by ``theta_A`` about their anchor bond;
3. every micro-group rotates about its own centre, then translates;
4. every macro-group rotates its member micro-groups about their own centres
   (or, for the ligand in ``ligand_whole_body`` mode, about the centre of the
   whole ligand) and translates them.

All centres are means of the coordinates entering the stage and are
differentiated through. Rotations are written as ``p + (R - I)(p - c)`` so a
zero angle is an exact fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .segmentation import SegmentationPlan

__all__ = [
    "TransformParams",
    "Transformer",
    "forward",
    "rotation_matrix",
    "rotation_matrices",
    "MODES",
]

MODES = ("standard", "ligand_whole_body")
FIELDS = ("atom_disp", "theta_A", "theta_R_micro", "theta_T_micro", "theta_R_macro", "theta_T_macro")


@dataclass
class TransformParams:
    atom_disp: np.ndarray
    theta_A: np.ndarray
    theta_R_micro: np.ndarray
    theta_T_micro: np.ndarray
    theta_R_macro: np.ndarray
    theta_T_macro: np.ndarray

    @classmethod
    def zeros(cls, plan: SegmentationPlan) -> "TransformParams":
        n_mic = len(plan.micro_groups)
        n_mac = len(plan.macro_groups)
        return cls(
            atom_disp=np.zeros((len(plan.movable_atoms), 3)),
            theta_A=np.zeros(len(plan.anchored)),
            theta_R_micro=np.zeros((n_mic, 3)),
            theta_T_micro=np.zeros((n_mic, 3)),
            theta_R_macro=np.zeros((n_mac, 3)),
            theta_T_macro=np.zeros((n_mac, 3)),
        )

    def arrays(self):
        return [getattr(self, f) for f in FIELDS]

    def copy(self) -> "TransformParams":
        return TransformParams(*(a.copy() for a in self.arrays()))

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def sizes(self):
        return [a.size for a in self.arrays()]

    @classmethod
    def unflatten(cls, template: "TransformParams", vec) -> "TransformParams":
        vec = np.asarray(vec, dtype=float)
        total = sum(template.sizes())
        if vec.size != total:
            raise ShapeMismatch(f"flat vector has {vec.size} entries, expected {total}")
        out, pos = [], 0
        for a in template.arrays():
            out.append(vec[pos : pos + a.size].reshape(a.shape).copy())
            pos += a.size
        return cls(*out)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def check(self, plan: SegmentationPlan):
        ref = TransformParams.zeros(plan)
        for name, a, b in zip(FIELDS, self.arrays(), ref.arrays()):
            if np.shape(a) != b.shape:
                raise ShapeMismatch(f"{name} has shape {np.shape(a)}, plan needs {b.shape}")


def _axis_rotations(theta):
    """Per-axis rotation matrices and their angle derivatives, each (m, 3, 3)."""
    m = theta.shape[0]
    c = np.cos(theta)
    s = np.sin(theta)
    rx = np.zeros((m, 3, 3))
    ry = np.zeros((m, 3, 3))
    rz = np.zeros((m, 3, 3))
    rx[:, 0, 0] = 1.0
    rx[:, 1, 1] = c[:, 0]
    rx[:, 1, 2] = -s[:, 0]
    rx[:, 2, 1] = s[:, 0]
    rx[:, 2, 2] = c[:, 0]
    ry[:, 1, 1] = 1.0
    ry[:, 0, 0] = c[:, 1]
    ry[:, 0, 2] = s[:, 1]
    ry[:, 2, 0] = -s[:, 1]
    ry[:, 2, 2] = c[:, 1]
    rz[:, 2, 2] = 1.0
    rz[:, 0, 0] = c[:, 2]
    rz[:, 0, 1] = -s[:, 2]
    rz[:, 1, 0] = s[:, 2]
    rz[:, 1, 1] = c[:, 2]
    return rx, ry, rz, c, s


def rotation_matrices(theta):
    """``Rz(z) @ Ry(y) @ Rx(x)`` for each row of an (m, 3) angle array."""
    theta = np.asarray(theta, dtype=float).reshape(-1, 3)
    rx, ry, rz, _, _ = _axis_rotations(theta)
    return rz @ ry @ rx


def rotation_matrix(theta) -> np.ndarray:
    """Rotation by angles (x, y, z) in radians, composed as Rz @ Ry @ Rx."""
    return rotation_matrices(np.asarray(theta, dtype=float).reshape(1, 3))[0]


def _rotation_derivatives(theta):
    rx, ry, rz, c, s = _axis_rotations(theta)
    m = theta.shape[0]
    drx = np.zeros((m, 3, 3))
    dry = np.zeros((m, 3, 3))
    drz = np.zeros((m, 3, 3))
    drx[:, 1, 1] = -s[:, 0]
    drx[:, 1, 2] = -c[:, 0]
    drx[:, 2, 1] = c[:, 0]
    drx[:, 2, 2] = -s[:, 0]
    dry[:, 0, 0] = -s[:, 1]
    dry[:, 0, 2] = c[:, 1]
    dry[:, 2, 0] = -c[:, 1]
    dry[:, 2, 2] = -s[:, 1]
    drz[:, 0, 0] = -s[:, 2]
    drz[:, 0, 1] = -c[:, 2]
    drz[:, 1, 0] = c[:, 2]
    drz[:, 1, 1] = -s[:, 2]
    return rz @ ry @ drx, rz @ dry @ rx, drz @ ry @ rx


def _bincount3(idx, vec, n):
    return np.stack([np.bincount(idx, weights=vec[:, c], minlength=n) for c in range(3)], axis=1)


class _RigidStage:
    """Rotate blocks of atoms about their block centre, then translate.

    ``sel`` are local atom rows, ``block`` the block of each selected row and
    ``param`` the parameter row used by each block.
    """

    def __init__(self, sel, block, param, n_blocks, n_params):
        self.sel = np.asarray(sel, dtype=np.int64)
        self.block = np.asarray(block, dtype=np.int64)
        self.param = np.asarray(param, dtype=np.int64)
        self.n_blocks = n_blocks
        self.n_params = n_params
        self.counts = np.bincount(self.block, minlength=n_blocks).astype(float)
        self.atom_param = self.param[self.block] if len(self.block) else np.zeros(0, dtype=np.int64)

    def forward(self, x, theta_r, theta_t):
        y = x.copy()
        if len(self.sel) == 0:
            return y, None
        p = x[self.sel]
        centres = _bincount3(self.block, p, self.n_blocks) / self.counts[:, None]
        u = p - centres[self.block]
        rot = rotation_matrices(theta_r)
        ri = rot - np.eye(3)
        y[self.sel] = p + np.einsum("nij,nj->ni", ri[self.atom_param], u) + theta_t[self.atom_param]
        return y, (u, rot, theta_r)

    def backward(self, gy, cache, g_theta_r, g_theta_t):
        gx = gy.copy()
        if cache is None:
            return gx
        u, rot, theta_r = cache
        g = gy[self.sel]
        g_theta_t += _bincount3(self.atom_param, g, self.n_params)
        outer = g[:, :, None] * u[:, None, :]
        g_rot = np.stack(
            [np.bincount(self.atom_param, weights=outer[:, a, b], minlength=self.n_params) for a in range(3) for b in range(3)],
            axis=1,
        ).reshape(-1, 3, 3)
        dx, dy, dz = _rotation_derivatives(theta_r)
        g_theta_r[:, 0] += np.einsum("nij,nij->n", g_rot, dx)
        g_theta_r[:, 1] += np.einsum("nij,nij->n", g_rot, dy)
        g_theta_r[:, 2] += np.einsum("nij,nij->n", g_rot, dz)
        rt = np.transpose(rot, (0, 2, 1))[self.atom_param]
        rtg = np.einsum("nij,nj->ni", rt, g)
        # centre adjoint: -(R - I)^T g summed over the block, shared equally
        g_c = _bincount3(self.block, g - rtg, self.n_blocks) / self.counts[:, None]
        gx[self.sel] = rtg + g_c[self.block]
        return gx


class Transformer:
    """Forward map and reverse-mode adjoint compiled from a plan.

    Works on local movable rows (ordered as ``plan.movable_atoms``). Anchor
    atoms that are fixed are read from the fixed coordinates.
    """

    def __init__(self, plan: SegmentationPlan, mode: str = "standard"):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.plan = plan
        self.mode = mode
        n = plan.atom_count
        mov = plan.movable_atoms
        self.n_mov = len(mov)
        local = np.full(n, -1, dtype=np.int64)
        local[mov] = np.arange(self.n_mov)
        self.local = local
        fixed_local = np.full(n, -1, dtype=np.int64)
        fixed_local[plan.fixed_atoms] = np.arange(len(plan.fixed_atoms))
        self.fixed_local = fixed_local

        micro = plan.micro_groups
        n_mic = len(micro)
        n_mac = len(plan.macro_groups)

        # stage 2: anchored groups
        anchored = [g for g in micro if g.anchor is not None]
        self.n_anchor = len(anchored)
        sel2, grp2 = [], []
        ext_fixed = []  # global ids of fixed anchor atoms, appended after movable rows
        ext_of = {}
        a_rows, b_rows = [], []

        def ext_row(atom):
            if local[atom] >= 0:
                return int(local[atom])
            if atom not in ext_of:
                ext_of[atom] = self.n_mov + len(ext_fixed)
                ext_fixed.append(atom)
            return ext_of[atom]

        for k, g in enumerate(anchored):
            rows = local[list(g.atoms)]
            sel2.extend(rows)
            grp2.extend([k] * len(rows))
            a_rows.append(ext_row(g.anchor[0]))
            b_rows.append(ext_row(g.anchor[1]))
        self.sel2 = np.array(sel2, dtype=np.int64)
        self.grp2 = np.array(grp2, dtype=np.int64)
        self.anchor_a = np.array(a_rows, dtype=np.int64)
        self.anchor_b = np.array(b_rows, dtype=np.int64)
        self.ext_fixed = np.array(ext_fixed, dtype=np.int64)

        # stage 3: every movable atom belongs to exactly one micro-group
        sel3, blk3 = [], []
        for g in micro:
            rows = local[list(g.atoms)]
            sel3.extend(rows)
            blk3.extend([g.id] * len(rows))
        self.stage3 = _RigidStage(sel3, blk3, np.arange(n_mic), n_mic, n_mic)

        # stage 4
        sel4, blk4, par4 = [], [], []
        for mac in plan.macro_groups:
            whole = mode == "ligand_whole_body" and mac.kind == "ligand"
            if whole:
                block_id = len(par4)
                par4.append(mac.id)
            for mid in mac.micro_ids:
                if not whole:
                    block_id = len(par4)
                    par4.append(mac.id)
                rows = local[list(micro[mid].atoms)]
                sel4.extend(rows)
                blk4.extend([block_id] * len(rows))
        self.stage4 = _RigidStage(sel4, blk4, par4, len(par4), n_mac)

    def fixed_anchor_coords(self, r_f):
        if len(self.ext_fixed) == 0:
            return np.zeros((0, 3))
        if r_f is None:
            raise ShapeMismatch("anchor axis uses fixed atoms; fixed coordinates are required")
        return np.asarray(r_f, dtype=float)[self.fixed_local[self.ext_fixed]]

    def forward(self, params: TransformParams, r_m_init, r_f=None, keep=False):
        """Return final movable coordinates; with ``keep`` also the tape for :meth:`backward`."""
        x0 = np.asarray(r_m_init, dtype=float)
        if x0.shape != (self.n_mov, 3):
            raise ShapeMismatch(f"r_m_init has shape {x0.shape}, plan needs ({self.n_mov}, 3)")
        params.check(self.plan)
        x1 = x0 + params.atom_disp
        x2, c2 = self._anchor_forward(x1, params.theta_A, self.fixed_anchor_coords(r_f))
        x3, c3 = self.stage3.forward(x2, params.theta_R_micro, params.theta_T_micro)
        x4, c4 = self.stage4.forward(x3, params.theta_R_macro, params.theta_T_macro)
        if keep:
            return x4, (c2, c3, c4)
        return x4

    def backward(self, g_final, tape, params: TransformParams):
        """Adjoint of :meth:`forward`: returns ``(param gradient, gradient w.r.t. r_m_init)``."""
        c2, c3, c4 = tape
        grad = TransformParams.zeros(self.plan)
        g3 = self.stage4.backward(np.asarray(g_final, dtype=float), c4, grad.theta_R_macro, grad.theta_T_macro)
        g2 = self.stage3.backward(g3, c3, grad.theta_R_micro, grad.theta_T_micro)
        g1 = self._anchor_backward(g2, c2, params.theta_A, grad.theta_A)
        grad.atom_disp[:] = g1
        return grad, g1

    def _anchor_forward(self, x, theta_a, ext_fixed_xyz):
        y = x.copy()
        if self.n_anchor == 0:
            return y, None
        ext = np.vstack([x, ext_fixed_xyz])
        a = ext[self.anchor_a]
        d = ext[self.anchor_b] - a
        length = np.linalg.norm(d, axis=1)
        k = d / length[:, None]
        s = np.sin(theta_a)
        q = 1.0 - np.cos(theta_a)
        p = x[self.sel2]
        kg = k[self.grp2]
        v = p - a[self.grp2]
        kv = np.cross(kg, v)
        kdotv = np.einsum("ij,ij->i", kg, v)
        kkv = kg * kdotv[:, None] - v
        y[self.sel2] = p + s[self.grp2][:, None] * kv + q[self.grp2][:, None] * kkv
        return y, (ext.shape[0], k, length, v, kv, kkv, kdotv)

    def _anchor_backward(self, gy, cache, theta_a, g_theta_a):
        gx = gy.copy()
        if cache is None:
            return gx
        n_ext, k, length, v, kv, kkv, kdotv = cache
        s = np.sin(theta_a)[self.grp2][:, None]
        q = (1.0 - np.cos(theta_a))[self.grp2][:, None]
        c = np.cos(theta_a)[self.grp2][:, None]
        kg = k[self.grp2]
        g = gy[self.sel2]
        # d y / d theta = cos * (k x v) + sin * (k (k.v) - v)
        g_theta_a += np.bincount(self.grp2, weights=np.einsum("ij,ij->i", g, c * kv + s * kkv), minlength=self.n_anchor)
        kdotg = np.einsum("ij,ij->i", kg, g)
        g_v = s * np.cross(g, kg) + q * (kg * kdotg[:, None] - g)
        g_k_atom = s * np.cross(v, g) + q * (g * kdotv[:, None] + v * kdotg[:, None])
        g_k = _bincount3(self.grp2, g_k_atom, self.n_anchor)
        g_d = (g_k - k * np.einsum("ij,ij->i", k, g_k)[:, None]) / length[:, None]
        g_a = -_bincount3(self.grp2, g_v, self.n_anchor) - g_d
        g_ext = np.zeros((n_ext, 3))
        g_ext[: gx.shape[0]] = gx
        g_ext[self.sel2] += g_v
        np.add.at(g_ext, self.anchor_a, g_a)
        np.add.at(g_ext, self.anchor_b, g_d)
        return g_ext[: gx.shape[0]]


def forward(plan: SegmentationPlan, params: TransformParams, r_m_init, mode: str = "standard", r_f=None):
    """Final movable coordinates after all four stages."""
    return Transformer(plan, mode).forward(params, r_m_init, r_f)
