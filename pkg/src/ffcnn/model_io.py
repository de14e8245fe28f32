"""Versioned flat-binary model containers.

Layouts (all integers little-endian, floats little-endian f64):

  pipeline blob:  b"SAAB" u16 version
                  u32 H W C, u16 arch-name length + utf-8 name
                  u32 n_layers, per layer:
                    u32 wh ww stride in_ch k; f64 bias;
                    f64[k-1] ac eigenvalues; f64[k*n] kernels row-major
                    (row 0 is the DC kernel)
                  u32 final h w C; u32 s s'; per channel:
                    f64[s] mean; f64[s'] eigenvalues; f64[s'*s] components

  model file:     pipeline blob followed by
                  b"SSL1" u16 version
                  u32 n_classes n_stages, per stage:
                    u32 d_plus_1 m; u8 relu; f64[(d+1)*m] weights row-major

  ensemble file:  b"ENS1" u16 version
                  u32 n_members, per member: u16 path length + utf-8 path
                  (relative to the manifest)
                  f64 energy threshold, fusion PCA + SVM blobs
"""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .numerics import PcaModel, RbfSvmModel
from .saab import CpcaModel, SaabLayer, SaabPipeline
from .ssl import CascadeConfig, LsrStage, SslFfcnnModel

_VERSION = 1


class _Writer:
    def __init__(self, fh):
        self.fh = fh

    def u16(self, v):
        self.fh.write(struct.pack("<H", v))

    def u32(self, *vs):
        self.fh.write(struct.pack(f"<{len(vs)}I", *vs))

    def f64(self, v):
        self.fh.write(struct.pack("<d", v))

    def text(self, s):
        raw = s.encode("utf-8")
        self.u16(len(raw))
        self.fh.write(raw)

    def array(self, arr):
        self.fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, fh):
        self.fh = fh

    def _take(self, size, what):
        data = self.fh.read(size)
        if len(data) != size:
            raise FormatError(f"truncated container while reading {what}")
        return data

    def u16(self, what="u16"):
        return struct.unpack("<H", self._take(2, what))[0]

    def u32(self, count=1, what="u32"):
        vals = struct.unpack(f"<{count}I", self._take(4 * count, what))
        return vals[0] if count == 1 else vals

    def f64(self, what="f64"):
        return struct.unpack("<d", self._take(8, what))[0]

    def text(self, what="text"):
        return self._take(self.u16(what), what).decode("utf-8")

    def array(self, shape, what="array"):
        count = int(np.prod(shape)) if shape else 0
        data = self._take(8 * count, what)
        return np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)

    def magic(self, expected):
        got = self._take(len(expected), "magic")
        if got != expected:
            raise FormatError(f"bad magic {got!r}, expected {expected!r}")
        version = self.u16("version")
        if version != _VERSION:
            raise FormatError(f"unsupported container version {version}")


def _write_pca(w, model):
    d = model.mean.shape[0]
    k = model.components.shape[0]
    w.u32(d, k)
    w.array(model.mean)
    w.array(model.eigenvalues)
    w.array(model.components)


def _read_pca(r):
    d, k = r.u32(2, "pca dims")
    mean = r.array((d,), "pca mean")
    eigenvalues = r.array((k,), "pca eigenvalues")
    components = r.array((k, d), "pca components")
    return PcaModel(mean=mean, components=components, eigenvalues=eigenvalues)


def _write_pipeline(w, pipe):
    w.fh.write(b"SAAB")
    w.u16(_VERSION)
    w.u32(*pipe.input_shape)
    w.text(pipe.arch)
    w.u32(len(pipe.layers))
    for layer in pipe.layers:
        k = layer.num_kernels
        n = layer.dc_kernel.shape[0]
        w.u32(layer.window[0], layer.window[1], layer.stride, layer.in_channels, k)
        w.f64(layer.bias)
        eig = layer.ac_eigenvalues
        w.array(eig if eig is not None else np.zeros(k - 1))
        w.array(layer.kernel_matrix())
    w.u32(*pipe.final_shape)
    w.u32(pipe.cpca.spatial_dim, pipe.cpca.reduced_dim)
    for model in pipe.cpca.models:
        w.array(model.mean)
        w.array(model.eigenvalues)
        w.array(model.components)


def _read_pipeline(r):
    r.magic(b"SAAB")
    input_shape = r.u32(3, "input shape")
    arch = r.text("arch name")
    n_layers = r.u32(what="layer count")
    layers = []
    for _ in range(n_layers):
        wh, ww, stride, in_ch, k = r.u32(5, "layer header")
        bias = r.f64("bias")
        n = wh * ww * in_ch
        eig = r.array((k - 1,), "ac eigenvalues")
        kernels = r.array((k, n), "kernels")
        layers.append(
            SaabLayer(
                window=(wh, ww),
                stride=stride,
                in_channels=in_ch,
                dc_kernel=kernels[0],
                ac_kernels=kernels[1:],
                bias=bias,
                ac_eigenvalues=eig,
            )
        )
    final_shape = r.u32(3, "final shape")
    s, s_prime = r.u32(2, "cpca dims")
    models = [
        PcaModel(
            mean=r.array((s,), "cpca mean"),
            eigenvalues=r.array((s_prime,), "cpca eigenvalues"),
            components=r.array((s_prime, s), "cpca components"),
        )
        for _ in range(final_shape[2])
    ]
    cpca = CpcaModel(models=models, spatial_dim=s, reduced_dim=s_prime)
    return SaabPipeline(
        layers=layers,
        cpca=cpca,
        input_shape=input_shape,
        final_shape=final_shape,
        output_dim=final_shape[2] * s_prime,
        arch=arch,
    )


def save_pipeline(pipe, path):
    with open(path, "wb") as fh:
        _write_pipeline(_Writer(fh), pipe)


def load_pipeline(path):
    with open(path, "rb") as fh:
        return _read_pipeline(_Reader(fh))


def _write_model(w, model):
    if model.pipeline is not None:
        _write_pipeline(w, model.pipeline)
    w.fh.write(b"SSL1")
    w.u16(_VERSION)
    w.u32(model.n_classes, len(model.stages))
    for stage in model.stages:
        w.u32(stage.W.shape[0], stage.W.shape[1])
        w.fh.write(struct.pack("<B", 1 if stage.apply_relu else 0))
        w.array(stage.W)


def save_model(model, path):
    """Pipeline blob (when attached) followed by the FC-stage blob."""
    with open(path, "wb") as fh:
        _write_model(_Writer(fh), model)


def load_model(path):
    with open(path, "rb") as fh:
        r = _Reader(fh)
        head = fh.peek(4)[:4] if hasattr(fh, "peek") else b""
        pipeline = None
        if head == b"SAAB":
            pipeline = _read_pipeline(r)
        r.magic(b"SSL1")
        n_classes, n_stages = r.u32(2, "stage header")
        stages = []
        for _ in range(n_stages):
            dp1, m = r.u32(2, "stage dims")
            relu = r._take(1, "relu flag")[0] != 0
            stages.append(LsrStage(W=r.array((dp1, m), "stage weights"), apply_relu=relu))
    dims = [stages[0].W.shape[0] - 1] + [s.W.shape[1] for s in stages]
    return SslFfcnnModel(
        stages=stages,
        stage_dims=dims,
        n_classes=n_classes,
        config=CascadeConfig(widths=tuple(dims[1:])),
        pipeline=pipeline,
    )


def _write_svm(w, svm):
    n_sv, d = svm.support_vectors.shape
    w.u32(n_sv, d, svm.classes.shape[0])
    w.f64(svm.gamma)
    w.f64(svm.C)
    w.array(svm.classes.astype(np.float64))
    w.array(svm.support_vectors)
    w.array(svm.dual_coef)
    w.array(svm.rho)


def _read_svm(r):
    n_sv, d, n_classes = r.u32(3, "svm header")
    gamma = r.f64("gamma")
    c = r.f64("C")
    classes = r.array((n_classes,), "classes").astype(np.int64)
    sv = r.array((n_sv, d), "support vectors")
    coef = r.array((n_classes, n_sv), "dual coefficients")
    rho = r.array((n_classes,), "rho")
    return RbfSvmModel(
        support_vectors=sv, dual_coef=coef, rho=rho, classes=classes, gamma=gamma, C=c
    )


def save_ensemble(model, path):
    """Manifest (member paths, diversity tags, fusion blob); member model
    files land next to the manifest."""
    path = Path(path)
    entries = []
    for i, member in enumerate(model.members):
        member_path = path.with_suffix(f".member{i}.ffm")
        save_model(member, member_path)
        div = member.diversity
        entries.append(
            (member_path.name, div.kind if div else "", div.arch if div else "",
             div.input_tag if div else "")
        )
    with open(path, "wb") as fh:
        w = _Writer(fh)
        fh.write(b"ENS1")
        w.u16(_VERSION)
        w.u32(len(entries))
        for fields in entries:
            for text in fields:
                w.text(text)
        w.f64(model.energy_threshold)
        _write_pca(w, model.fusion_pca)
        _write_svm(w, model.svm)


def load_ensemble(path):
    from .ensemble import DiversityConfig, EnsembleModel

    path = Path(path)
    with open(path, "rb") as fh:
        r = _Reader(fh)
        r.magic(b"ENS1")
        n_members = r.u32(what="member count")
        entries = [
            tuple(r.text("member entry") for _ in range(4)) for _ in range(n_members)
        ]
        threshold = r.f64("energy threshold")
        pca = _read_pca(r)
        svm = _read_svm(r)
    members = []
    for name, kind, arch, tag in entries:
        member = load_model(path.parent / name)
        if kind:
            member.diversity = DiversityConfig(kind=kind, arch=arch, input_tag=tag)
        members.append(member)
    return EnsembleModel(members=members, fusion_pca=pca, svm=svm, energy_threshold=threshold)
