# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Taylor-Hood element kernels (same contract as _kernels_py)."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline void _p2_grad(double l0, double l1, double l2,
                          double[:, :] gl, double[:, :] out) noexcept nogil:
    # d phi_i / d x_c = sum_k (d phi_i / d lambda_k) * (d lambda_k / d x_c)
    cdef double d[6][3]
    cdef int i, c
    d[0][0] = 4 * l0 - 1; d[0][1] = 0; d[0][2] = 0
    d[1][0] = 0; d[1][1] = 4 * l1 - 1; d[1][2] = 0
    d[2][0] = 0; d[2][1] = 0; d[2][2] = 4 * l2 - 1
    d[3][0] = 0; d[3][1] = 4 * l2; d[3][2] = 4 * l1
    d[4][0] = 4 * l2; d[4][1] = 0; d[4][2] = 4 * l0
    d[5][0] = 4 * l1; d[5][1] = 4 * l0; d[5][2] = 0
    for i in range(6):
        for c in range(2):
            out[i, c] = d[i][0] * gl[0, c] + d[i][1] * gl[1, c] + d[i][2] * gl[2, c]


def element_matrices(double[:, :] points, cnp.int64_t[:, :] triangles):
    cdef Py_ssize_t m = triangles.shape[0]
    cdef Py_ssize_t t
    cdef int q, i, j, k, c
    cdef double x0, y0, x1, y1, x2, y2, det, w, s
    cdef double qp[3][3]
    qp[0][0] = 0.5; qp[0][1] = 0.5; qp[0][2] = 0.0
    qp[1][0] = 0.0; qp[1][1] = 0.5; qp[1][2] = 0.5
    qp[2][0] = 0.5; qp[2][1] = 0.0; qp[2][2] = 0.5

    stiff_np = np.zeros((m, 6, 6))
    div_np = np.zeros((m, 3, 6, 2))
    cdef double[:, :, :] stiff = stiff_np
    cdef double[:, :, :, :] div = div_np
    cdef double[:, :] gl = np.empty((3, 2))
    cdef double[:, :] g = np.empty((6, 2))

    with nogil:
        for t in range(m):
            x0 = points[triangles[t, 0], 0]; y0 = points[triangles[t, 0], 1]
            x1 = points[triangles[t, 1], 0]; y1 = points[triangles[t, 1], 1]
            x2 = points[triangles[t, 2], 0]; y2 = points[triangles[t, 2], 1]
            det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
            gl[0, 0] = (y1 - y2) / det; gl[0, 1] = (x2 - x1) / det
            gl[1, 0] = (y2 - y0) / det; gl[1, 1] = (x0 - x2) / det
            gl[2, 0] = (y0 - y1) / det; gl[2, 1] = (x1 - x0) / det
            w = det / 6.0
            for q in range(3):
                _p2_grad(qp[q][0], qp[q][1], qp[q][2], gl, g)
                for i in range(6):
                    for j in range(i, 6):
                        s = g[i, 0] * g[j, 0] + g[i, 1] * g[j, 1]
                        stiff[t, i, j] += w * s
                    for k in range(3):
                        for c in range(2):
                            div[t, k, i, c] += w * qp[q][k] * g[i, c]
            for i in range(6):
                for j in range(i + 1, 6):
                    stiff[t, j, i] = stiff[t, i, j]
    return stiff_np, div_np
