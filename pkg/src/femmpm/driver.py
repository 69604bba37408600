"""Scenario configuration and orchestration of the three-phase pipeline.

A run lays its artifacts out as

    <out>/<scenario>/<label>/        # label: tT0, tT2, pure_mpm, pure_fem
        metadata.json
        record.csv                   # time series (both phases for hybrids)
        profile_final.csv
        fem/reference_mesh.txt
        fem/mesh_####.txt, gauss_####.txt, nodes_####.txt
        transfer/bundle.txt
        mpm/particles_####.txt
    <out>/<scenario>/summary.csv     # sweep table

Everything written is deterministic: identical configs reproduce identical
bytes. `rebuild_summary` recreates the sweep table from frame files alone.
"""

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__, analysis, fem
from . import mesh as meshmod
from . import mpm as mpmmod
from . import transfer
from .errors import ConfigError, EntanglementError, FemMpmError
from .materials import MaterialParams, StressStrainState, deviatoric_strain

log = logging.getLogger(__name__)

FRAME_EPS = 1e-9


@dataclass
class GeometryConfig:
    kind: str = "column"
    height: float = 40.0
    width: float = 50.0            # columns
    run_per_rise: float = 1.0      # slopes
    crest_length: float = 20.0

    def __post_init__(self):
        if self.kind not in ("column", "slope"):
            raise ConfigError("geometry.kind must be 'column' or 'slope'")
        for name in ("height", "width", "run_per_rise", "crest_length"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"geometry.{name} must be positive")


@dataclass
class OutputConfig:
    frames_every: float = 0.25

    def __post_init__(self):
        if self.frames_every <= 0:
            raise ConfigError("output.frames_every must be positive")


@dataclass
class ScenarioConfig:
    scenario: str
    geometry: GeometryConfig
    element_size: float
    material: MaterialParams
    fem: fem.FemPhaseConfig
    transfer: transfer.TransferConfig
    mpm: mpmmod.MpmConfig
    output: OutputConfig
    mode: str = "hybrid"
    transfer_times: tuple = (0.0,)
    grid_extension: float = 130.0

    def __post_init__(self):
        if self.element_size <= 0:
            raise ConfigError("element_size must be positive")
        if self.mode not in ("hybrid", "pure_fem", "pure_mpm"):
            raise ConfigError("mode must be hybrid, pure_fem or pure_mpm")
        times = tuple(float(t) for t in self.transfer_times)
        if any(t < 0 for t in times):
            raise ConfigError("transfer times must be non-negative")
        if list(times) != sorted(times):
            raise ConfigError("transfer times must be sorted")
        self.transfer_times = times

    @property
    def initial_height(self):
        return self.geometry.height

    @property
    def initial_width(self):
        if self.geometry.kind == "column":
            return self.geometry.width
        return self.geometry.crest_length + \
            self.geometry.run_per_rise * self.geometry.height

    def tau_c(self):
        return analysis.critical_time(self.initial_height, self.fem.gravity)

    def particle_size(self):
        return self.element_size / max(self.transfer.particles_per_axis)


def _build_section(cls, data, section):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in section '{section}'")
    coerced = {}
    for key, value in data.items():
        # YAML 1.1 reads exponents like 23.8e6 as strings; recover numbers
        if isinstance(value, str) and fields[key].type == "float":
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(
                    f"field '{section}.{key}' expects a number, got {value!r}")
        coerced[key] = value
    try:
        return cls(**coerced)
    except TypeError as exc:
        raise ConfigError(f"invalid section '{section}': {exc}") from exc


_TOP_KEYS = {"scenario", "mode", "element_size", "gravity", "transfer_times",
             "grid_extension", "geometry", "material", "fem", "transfer",
             "mpm", "output"}


def config_from_dict(data):
    """Validated ScenarioConfig from a plain dict; unknown keys are errors."""
    data = dict(data)
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    if "scenario" not in data:
        raise ConfigError("config must name its 'scenario'")
    gravity = float(data.pop("gravity", fem.GRAVITY))

    def section(name, cls, extra=None):
        sub = dict(data.get(name, {}) or {})
        sub.update(extra or {})
        return _build_section(cls, sub, name)

    raw_transfer = dict(data.get("transfer", {}) or {})
    transfer_times = raw_transfer.pop("transfer_times",
                                      data.get("transfer_times", (0.0,)))
    if np.isscalar(transfer_times):
        transfer_times = (transfer_times,)
    mpm_raw = dict(data.get("mpm", {}) or {})
    mpm_raw.setdefault("cell_size", float(data.get("element_size", 1.0)))
    return ScenarioConfig(
        scenario=str(data["scenario"]),
        mode=data.get("mode", "hybrid"),
        geometry=section("geometry", GeometryConfig),
        element_size=float(data.get("element_size", 1.0)),
        material=section("material", MaterialParams),
        fem=section("fem", fem.FemPhaseConfig, {"gravity": gravity}),
        transfer=_build_section(transfer.TransferConfig, raw_transfer, "transfer"),
        mpm=_build_section(mpmmod.MpmConfig, {**mpm_raw, "gravity": gravity}, "mpm"),
        output=section("output", OutputConfig),
        transfer_times=tuple(transfer_times),
        grid_extension=float(data.get("grid_extension", 130.0)),
    )


def load_config(path):
    """Read and validate a YAML scenario file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} is not a mapping")
    config = config_from_dict(data)
    config._source_path = str(path)
    config._source_sha256 = hashlib.sha256(path.read_bytes()).hexdigest()
    return config


def config_echo(config):
    """Resolved configuration as a JSON-friendly dict."""
    return {
        "scenario": config.scenario, "mode": config.mode,
        "element_size": config.element_size,
        "transfer_times": list(config.transfer_times),
        "grid_extension": config.grid_extension,
        "geometry": asdict(config.geometry),
        "material": asdict(config.material),
        "fem": asdict(config.fem),
        "transfer": {"particles_per_axis": list(config.transfer.particles_per_axis),
                     "rbf_shape": config.transfer.rbf_shape},
        "mpm": asdict(config.mpm),
        "output": asdict(config.output),
        "code_version": __version__,
        "config_sha256": getattr(config, "_source_sha256", None),
    }


def build_mesh(config):
    geo = config.geometry
    if geo.kind == "column":
        return meshmod.structured_grid(geo.width, geo.height, config.element_size)
    return meshmod.slope_grid(geo.height, geo.run_per_rise, geo.crest_length,
                              config.element_size)


# ---------------------------------------------------------------------------
# frame files


def _write_columnar(path, header, columns, fmt=None):
    data = np.column_stack(columns)
    fmt = fmt or ["%.17g"] * data.shape[1]
    np.savetxt(path, data, fmt=fmt, header=" ".join(header), comments="")


def dump_fem_frame(dirpath, index, mesh, state):
    dirpath = Path(dirpath)
    meshmod.write_mesh_snapshot(mesh, dirpath / f"mesh_{index:04d}.txt")
    n_g = state.gauss_order ** 2
    elem = np.repeat(np.arange(mesh.n_elements), n_g)
    gp = np.tile(np.arange(n_g), mesh.n_elements)
    pos = transfer.fem_gauss_positions(mesh, state.gauss_order)
    eps_q = deviatoric_strain(state.gauss)
    _write_columnar(
        dirpath / f"gauss_{index:04d}.txt",
        ["elem", "gp", "x", "y", "sxx", "syy", "szz", "sxy",
         "exx", "eyy", "ezz", "exy", "epq", "eps_q"],
        [elem, gp, pos[:, 0], pos[:, 1],
         state.gauss.stress[:, 0], state.gauss.stress[:, 1],
         state.gauss.stress[:, 2], state.gauss.stress[:, 3],
         state.gauss.strain[:, 0], state.gauss.strain[:, 1],
         state.gauss.strain[:, 2], state.gauss.strain[:, 3],
         state.gauss.plastic_strain, eps_q],
        fmt=["%d", "%d"] + ["%.17g"] * 12)
    ids = np.arange(mesh.n_nodes)
    _write_columnar(
        dirpath / f"nodes_{index:04d}.txt",
        ["id", "x", "y", "ux", "uy", "vx", "vy"],
        [ids, mesh.node_coords[:, 0], mesh.node_coords[:, 1],
         state.u[:, 0], state.u[:, 1], state.v[:, 0], state.v[:, 1]],
        fmt=["%d"] + ["%.17g"] * 6)


def dump_mpm_frame(dirpath, index, particles):
    eps_q = deviatoric_strain(StressStrainState(
        particles.stress, particles.strain, particles.plastic_strain))
    _write_columnar(
        Path(dirpath) / f"particles_{index:04d}.txt",
        ["id", "x", "y", "vx", "vy", "sxx", "syy", "szz", "sxy", "eps_q",
         "volume", "mass"],
        [np.arange(particles.n_particles), particles.x[:, 0], particles.x[:, 1],
         particles.v[:, 0], particles.v[:, 1],
         particles.stress[:, 0], particles.stress[:, 1],
         particles.stress[:, 2], particles.stress[:, 3], eps_q,
         particles.volume, particles.mass],
        fmt=["%d"] + ["%.17g"] * 11)


def read_mpm_frame(path):
    data = np.atleast_2d(np.loadtxt(path, skiprows=1))
    return {"x": data[:, 1:3], "v": data[:, 3:5], "stress": data[:, 5:9],
            "eps_q": data[:, 9], "volume": data[:, 10], "mass": data[:, 11]}


def write_profile(path, profile):
    _write_columnar(path, ["bin_center", "elevation", "count"],
                    [profile.bin_centers, profile.elevation, profile.counts],
                    fmt=["%.17g", "%.17g", "%d"])


def read_profile(path, bin_width=2.0):
    data = np.atleast_2d(np.loadtxt(path, skiprows=1))
    counts = data[:, 2].astype(int)
    populated = np.flatnonzero(counts >= 3)
    return analysis.SurfaceProfile(
        bin_centers=data[:, 0], elevation=data[:, 1], counts=counts,
        bin_width=bin_width, toe_index=int(populated[-1]) if populated.size else -1,
        empty_flagged=counts == 0)


# ---------------------------------------------------------------------------
# phases


def fem_record_row(record, t, mesh, state, config):
    report = fem.detect_entanglement(state, mesh)
    quality = analysis.mesh_quality(state, mesh)
    record.add_frame(
        t=t, runout_extent=float(mesh.node_coords[:, 0].max()),
        ke=analysis.kinetic_energy_fem(state, mesh, config.material.mass_density),
        ratio_min=report.min_ratio, ratio_avg=quality.ratio_avg,
        eps_q_avg=quality.eps_q_avg, phase="fem")


def fem_failure_phase(mesh, state, config, t_stop, snapshot_times=(),
                      on_frame=None, override_entanglement=False):
    """Advance the plastic FEM phase to t_stop, capturing snapshot copies.

    Steps are clamped so frames and snapshots land on exact times. The event
    grid always includes every configured transfer time, making a sweep and
    a standalone run step identically. Stops early at entanglement unless
    overridden; returns (snapshots, entangle_time).
    """
    all_times = {round(float(t), 9) for t in config.transfer_times}
    wanted = {round(float(t), 9) for t in snapshot_times}
    events = sorted(t for t in all_times | {round(t_stop, 9)}
                    if FRAME_EPS < t <= t_stop + FRAME_EPS)
    frame_dt = config.output.frames_every
    snapshots = {}
    entangle_time = None

    if 0.0 in wanted:
        snapshots[0.0] = (mesh.copy(), state.copy())
    if on_frame is not None:
        on_frame(state.time, mesh, state)
    next_frame = frame_dt

    while state.time < t_stop - FRAME_EPS:
        horizon = min([e for e in events if e > state.time + FRAME_EPS]
                      + [next_frame])
        valid = fem._valid_elements(mesh)
        dt = min(fem.cfl_dt(mesh, config.material, config.fem,
                            valid_elements=valid),
                 horizon - state.time)
        fem.step_failure(state, mesh, config.material, config.fem, dt)

        report = fem.detect_entanglement(state, mesh)
        if report.min_ratio <= 0.0 and entangle_time is None:
            entangle_time = state.time
            if not override_entanglement:
                if on_frame is not None:
                    on_frame(state.time, mesh, state)
                break
        emitted = False
        if state.time >= next_frame - FRAME_EPS:
            if on_frame is not None:
                on_frame(state.time, mesh, state)
            emitted = True
            while next_frame <= state.time + FRAME_EPS:
                next_frame = round(next_frame + frame_dt, 9)
        t_now = round(state.time, 9)
        if t_now in wanted and t_now not in snapshots:
            snapshots[t_now] = (mesh.copy(), state.copy())
            if not emitted and on_frame is not None:
                on_frame(state.time, mesh, state)
    return snapshots, entangle_time


def make_grid(config):
    """Background grid sized for the body plus the expected runout room."""
    walls = config.mpm.boundary == "all_walls"
    x_max = config.initial_width + (0.0 if walls else config.grid_extension)
    # generous head room: flow-front collisions can launch stray particles
    # well above the initial crest, and a run aborts if they leave the grid
    y_max = config.initial_height + 2.0 * config.mpm.cell_size \
        + (0.0 if walls else 0.4 * config.initial_height + 10.0)
    return mpmmod.BackgroundGrid.build(
        0.0, x_max, 0.0, y_max, config.mpm.cell_size,
        base=True, wall_left=True, wall_right=walls, wall_top=walls)


def mpm_phase(particles, config, pe0, t_start, record=None, frame_dir=None,
              grid=None):
    """Run the particle solver until t_end or sustained quiescence."""
    grid = grid or make_grid(config)
    counter = [0]

    def recorder(t, parts):
        if record is not None:
            record.add_frame(t=t, runout_extent=float(parts.x[:, 0].max()),
                             ke=parts.kinetic_energy(), phase="mpm")
        if frame_dir is not None:
            dump_mpm_frame(frame_dir, counter[0], parts)
        counter[0] += 1

    return mpmmod.run_mpm(particles, grid, config.material, config.mpm,
                          pe0=pe0, frame_interval=config.output.frames_every,
                          recorder=recorder, t_start=t_start)


def prepare_geostatic(config):
    mesh = build_mesh(config)
    state = fem.geostatic_solve(mesh, config.material, config.fem)
    return mesh, state


# ---------------------------------------------------------------------------
# full runs


def _run_dir(out_root, config, label):
    path = Path(out_root) / config.scenario / label
    for sub in ("fem", "transfer", "mpm"):
        (path / sub).mkdir(parents=True, exist_ok=True)
    return path


def _write_metadata(path, config, extra):
    meta = {"config": config_echo(config)}
    meta.update(extra)
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _label(transfer_time):
    return f"tT{transfer_time:g}"


def new_record(config, transfer_time, pe0):
    return analysis.RunRecord(
        pe0=pe0, height0=config.initial_height, length0=config.initial_width,
        tau_c=config.tau_c(), transfer_time=transfer_time)


def _finish_hybrid(run_dir, config, transfer_time, mesh, state, pe0, record,
                   entangle_time, override_entanglement=False):
    """Transfer the captured FEM state and run the runout phase."""
    quality = analysis.mesh_quality(state, mesh)
    bundle = transfer.execute_transfer(
        state, mesh, config.transfer, config.material,
        override_entanglement=override_entanglement)
    bundle.write(run_dir / "transfer" / "bundle.txt")

    particles = mpmmod.ParticleSet.from_bundle(bundle, config.mpm.cell_size)
    try:
        frames, quiet_since = mpm_phase(particles, config, pe0,
                                        t_start=transfer_time, record=record,
                                        frame_dir=run_dir / "mpm")
    except FemMpmError:
        # diagnostic dump, named so summary building ignores it
        eps_q = deviatoric_strain(StressStrainState(
            particles.stress, particles.strain, particles.plastic_strain))
        _write_columnar(
            run_dir / "mpm" / "crash_state.txt",
            ["id", "x", "y", "vx", "vy", "sxx", "syy", "szz", "sxy", "eps_q",
             "volume", "mass"],
            [np.arange(particles.n_particles), particles.x[:, 0],
             particles.x[:, 1], particles.v[:, 0], particles.v[:, 1],
             particles.stress[:, 0], particles.stress[:, 1],
             particles.stress[:, 2], particles.stress[:, 3], eps_q,
             particles.volume, particles.mass],
            fmt=["%d"] + ["%.17g"] * 11)
        record.write_csv(run_dir / "record.csv")
        raise
    record.write_csv(run_dir / "record.csv")
    profile = analysis.surface_profile(particles.x[:, 0], particles.x[:, 1])
    write_profile(run_dir / "profile_final.csv", profile)
    _write_metadata(run_dir / "metadata.json", config, {
        "label": _label(transfer_time),
        "mode": "hybrid",
        "transfer_time": transfer_time,
        "pe0": pe0,
        "tau_c": config.tau_c(),
        "entangle_time": entangle_time,
        "quiescent_since": quiet_since,
        "quality_at_transfer": asdict(quality),
        "transfer_diagnostics": bundle.diagnostics,
    })
    return run_dir


def run_hybrid(config, transfer_time, out_root, override_entanglement=False):
    """Full pipeline for one transfer time; returns the run directory."""
    run_dir = _run_dir(out_root, config, _label(transfer_time))
    mesh, state = prepare_geostatic(config)
    meshmod.write_mesh_snapshot(
        meshmod.QuadMesh(mesh.reference_coords.copy(), mesh.elements,
                         mesh.boundary_sets), run_dir / "fem" / "reference_mesh.txt")
    pe0 = analysis.potential_energy_0(mesh, config.material.mass_density,
                                      config.fem.gravity)
    record = new_record(config, transfer_time, pe0)
    if config.geometry.kind == "column":
        fem.release_lateral_boundary(state, "right")

    idx = [0]

    def on_frame(t, m, s):
        dump_fem_frame(run_dir / "fem", idx[0], m, s)
        idx[0] += 1
        fem_record_row(record, t, m, s, config)

    entangle_time = None
    if transfer_time > 0:
        snaps, entangle_time = fem_failure_phase(
            mesh, state, config, transfer_time,
            snapshot_times=(transfer_time,), on_frame=on_frame,
            override_entanglement=override_entanglement)
        if transfer_time not in snaps:
            raise EntanglementError(
                f"transfer at t={transfer_time:g}s refused: mesh entangled at "
                f"t={entangle_time:.3f}s", time=entangle_time)
        mesh, state = snaps[transfer_time]
    else:
        on_frame(0.0, mesh, state)

    return _finish_hybrid(run_dir, config, transfer_time, mesh, state, pe0,
                          record, entangle_time, override_entanglement)


def _surface_elevation_lookup(mesh, element_size):
    """Stepwise initial surface height h(x) sampled from reference nodes."""
    xs = mesh.reference_coords[:, 0]
    ys = mesh.reference_coords[:, 1]
    n_bins = max(1, int(round(xs.max() / element_size)))
    idx = np.clip((xs / element_size).astype(int), 0, n_bins - 1)
    tops = np.zeros(n_bins)
    np.maximum.at(tops, idx, ys)

    def lookup(x):
        b = np.clip((np.asarray(x) / element_size).astype(int), 0, n_bins - 1)
        return tops[b]

    return lookup


def initial_particles(config):
    """Direct particle discretization of the undeformed geometry.

    Particles sit at the transfer quadrature sites with a gravity-equilibrium
    stress guess: overburden vertical stress and elastic lateral coefficient
    nu/(1-nu).
    """
    mesh = build_mesh(config)
    state = fem.initial_state(mesh, config.material, config.fem)
    bundle = transfer.execute_transfer(state, mesh, config.transfer,
                                       config.material)
    rho = config.material.mass_density
    g = config.fem.gravity
    nu = config.material.poissons_ratio
    k0 = nu / (1.0 - nu)
    surface = _surface_elevation_lookup(mesh, config.element_size)
    depth = np.maximum(surface(bundle.position[:, 0]) - bundle.position[:, 1], 0.0)
    syy = -rho * g * depth
    bundle.stress[:, 0] = k0 * syy
    bundle.stress[:, 1] = syy
    bundle.stress[:, 2] = k0 * syy
    bundle.stress[:, 3] = 0.0
    bundle.strain[:] = 0.0
    return mesh, bundle


def run_pure_mpm(config, out_root):
    """Particle-only reference run from the undeformed geometry."""
    run_dir = _run_dir(out_root, config, "pure_mpm")
    mesh, bundle = initial_particles(config)
    bundle.write(run_dir / "transfer" / "bundle.txt")
    pe0 = analysis.potential_energy_0(mesh, config.material.mass_density,
                                      config.fem.gravity)
    record = new_record(config, math.nan, pe0)
    particles = mpmmod.ParticleSet.from_bundle(bundle, config.mpm.cell_size)
    frames, quiet_since = mpm_phase(particles, config, pe0, t_start=0.0,
                                    record=record, frame_dir=run_dir / "mpm")
    record.write_csv(run_dir / "record.csv")
    profile = analysis.surface_profile(particles.x[:, 0], particles.x[:, 1])
    write_profile(run_dir / "profile_final.csv", profile)
    _write_metadata(run_dir / "metadata.json", config, {
        "label": "pure_mpm", "mode": "pure_mpm", "pe0": pe0,
        "tau_c": config.tau_c(), "quiescent_since": quiet_since,
    })
    return run_dir


def run_pure_fem(config, out_root, override_entanglement=False):
    """Mesh-only run until entanglement (or the configured end time)."""
    run_dir = _run_dir(out_root, config, "pure_fem")
    mesh, state = prepare_geostatic(config)
    meshmod.write_mesh_snapshot(
        meshmod.QuadMesh(mesh.reference_coords.copy(), mesh.elements,
                         mesh.boundary_sets), run_dir / "fem" / "reference_mesh.txt")
    pe0 = analysis.potential_energy_0(mesh, config.material.mass_density,
                                      config.fem.gravity)
    record = new_record(config, math.nan, pe0)
    if config.geometry.kind == "column":
        fem.release_lateral_boundary(state, "right")
    idx = [0]

    def on_frame(t, m, s):
        dump_fem_frame(run_dir / "fem", idx[0], m, s)
        idx[0] += 1
        fem_record_row(record, t, m, s, config)

    _, entangle_time = fem_failure_phase(
        mesh, state, config, config.fem.max_time, on_frame=on_frame,
        override_entanglement=override_entanglement)
    record.write_csv(run_dir / "record.csv")
    # FEM surface profile from the exterior top/right boundary nodes
    boundary = np.unique(np.concatenate([
        mesh.boundary_sets.get("surface", np.empty(0, dtype=np.intp)),
        mesh.boundary_sets.get("right", np.empty(0, dtype=np.intp))]))
    order = np.argsort(mesh.node_coords[boundary, 0], kind="stable")
    _write_columnar(run_dir / "profile_final.csv", ["x", "y", "node"],
                    [mesh.node_coords[boundary[order], 0],
                     mesh.node_coords[boundary[order], 1],
                     boundary[order]], fmt=["%.17g", "%.17g", "%d"])
    _write_metadata(run_dir / "metadata.json", config, {
        "label": "pure_fem", "mode": "pure_fem", "pe0": pe0,
        "tau_c": config.tau_c(), "entangle_time": entangle_time,
    })
    return run_dir


def run_fem_phase(config, out_root, override_entanglement=False):
    """Standalone FEM phase dumping every frame, for later file-based transfer.

    Runs to the largest configured transfer time (or entanglement) and writes
    a frames_index.csv mapping frame numbers to simulated times.
    """
    run_dir = Path(out_root) / config.scenario / "fem_phase"
    run_dir.mkdir(parents=True, exist_ok=True)
    mesh, state = prepare_geostatic(config)
    meshmod.write_mesh_snapshot(
        meshmod.QuadMesh(mesh.reference_coords.copy(), mesh.elements,
                         mesh.boundary_sets), run_dir / "reference_mesh.txt")
    pe0 = analysis.potential_energy_0(mesh, config.material.mass_density,
                                      config.fem.gravity)
    record = new_record(config, math.nan, pe0)
    if config.geometry.kind == "column":
        fem.release_lateral_boundary(state, "right")
    index_rows = []

    def on_frame(t, m, s):
        dump_fem_frame(run_dir, len(index_rows), m, s)
        index_rows.append((len(index_rows), t))
        fem_record_row(record, t, m, s, config)

    t_stop = max(config.transfer_times) if config.transfer_times else \
        config.fem.max_time
    snaps, entangle_time = fem_failure_phase(
        mesh, state, config, t_stop, snapshot_times=config.transfer_times,
        on_frame=on_frame, override_entanglement=override_entanglement)
    with open(run_dir / "frames_index.csv", "w") as fh:
        fh.write("index,t\n")
        for i, t in index_rows:
            fh.write(f"{i},{t:.17g}\n")
    record.write_csv(run_dir / "record.csv")
    _write_metadata(run_dir / "metadata.json", config, {
        "label": "fem_phase", "mode": "fem", "pe0": pe0,
        "entangle_time": entangle_time,
        "snapshot_times": sorted(snaps),
    })
    return run_dir


def load_fem_state(fem_dir, time, config):
    """Rebuild (mesh, FemState) from dumped frame files at a recorded time."""
    fem_dir = Path(fem_dir)
    times = {}
    with open(fem_dir / "frames_index.csv") as fh:
        fh.readline()
        for line in fh:
            idx, t = line.strip().split(",")
            times[int(idx)] = float(t)
    match = [i for i, t in times.items() if abs(t - time) < 1e-6]
    if not match:
        raise ConfigError(
            f"no frame at t={time:g}s in {fem_dir}; available: "
            f"{sorted(set(times.values()))}")
    idx = match[-1]
    ref = meshmod.read_mesh_snapshot(fem_dir / "reference_mesh.txt")
    mesh = meshmod.read_mesh_snapshot(fem_dir / f"mesh_{idx:04d}.txt",
                                      reference_coords=ref.node_coords)
    nodes = np.atleast_2d(np.loadtxt(fem_dir / f"nodes_{idx:04d}.txt",
                                     skiprows=1))
    gauss = np.atleast_2d(np.loadtxt(fem_dir / f"gauss_{idx:04d}.txt",
                                     skiprows=1))
    n_g = int(gauss[:, 1].max()) + 1
    order = int(round(math.sqrt(n_g)))
    state = fem.FemState(
        time=times[idx],
        u=nodes[:, 3:5].copy(), v=nodes[:, 5:7].copy(),
        a=np.zeros((mesh.n_nodes, 2)),
        nodal_mass=fem.lumped_mass(mesh, config.material.mass_density, order),
        gauss=StressStrainState(gauss[:, 4:8], gauss[:, 8:12], gauss[:, 12]),
        gauss_order=order,
        base_y=float(ref.node_coords[ref.boundary_sets["base"], 1].min()),
    )
    return mesh, state


def run_mpm_from_bundle(config, bundle_path, out_root, t_start=0.0):
    """Standalone runout phase from a serialized transfer bundle."""
    run_dir = _run_dir(out_root, config, "mpm_phase")
    bundle = transfer.TransferBundle.read(bundle_path)
    mesh = build_mesh(config)
    pe0 = analysis.potential_energy_0(mesh, config.material.mass_density,
                                      config.fem.gravity)
    record = new_record(config, t_start, pe0)
    particles = mpmmod.ParticleSet.from_bundle(bundle, config.mpm.cell_size)
    frames, quiet_since = mpm_phase(particles, config, pe0, t_start=t_start,
                                    record=record, frame_dir=run_dir / "mpm")
    record.write_csv(run_dir / "record.csv")
    profile = analysis.surface_profile(particles.x[:, 0], particles.x[:, 1])
    write_profile(run_dir / "profile_final.csv", profile)
    _write_metadata(run_dir / "metadata.json", config, {
        "label": "mpm_phase", "mode": "mpm", "pe0": pe0,
        "transfer_time": t_start, "quiescent_since": quiet_since,
    })
    return run_dir


def run_pure(config, mode, out_root, override_entanglement=False):
    """Reference runs: mesh-only ('pure_fem') or particle-only ('pure_mpm')."""
    if mode == "pure_mpm":
        return run_pure_mpm(config, out_root)
    if mode == "pure_fem":
        return run_pure_fem(config, out_root, override_entanglement)
    raise ConfigError(f"unknown pure mode '{mode}'")


def run_sweep(config, out_root, override_entanglement=False):
    """Hybrid runs for every configured transfer time plus a pure-MPM
    reference, sharing one geostatic solution and one FEM failure pass."""
    times = list(config.transfer_times)
    mesh0, state0 = prepare_geostatic(config)
    pe0 = analysis.potential_energy_0(mesh0, config.material.mass_density,
                                      config.fem.gravity)

    run_dirs = {}
    records = {}
    ref_mesh = meshmod.QuadMesh(mesh0.reference_coords.copy(), mesh0.elements,
                                mesh0.boundary_sets)
    for t_t in times:
        d = _run_dir(out_root, config, _label(t_t))
        run_dirs[t_t] = d
        records[t_t] = new_record(config, t_t, pe0)
        meshmod.write_mesh_snapshot(ref_mesh, d / "fem" / "reference_mesh.txt")

    mesh, state = mesh0.copy(), state0.copy()
    if config.geometry.kind == "column":
        fem.release_lateral_boundary(state, "right")
    indices = {t_t: [0] for t_t in times}

    def on_frame(t, m, s):
        for t_t in times:
            if t <= t_t + FRAME_EPS:
                dump_fem_frame(run_dirs[t_t] / "fem", indices[t_t][0], m, s)
                indices[t_t][0] += 1
                fem_record_row(records[t_t], t, m, s, config)

    snapshots, entangle_time = fem_failure_phase(
        mesh, state, config, max(times), snapshot_times=times,
        on_frame=on_frame, override_entanglement=override_entanglement)

    completed = []
    for t_t in times:
        if t_t not in snapshots:
            log.warning("skipping transfer at t=%gs: mesh entangled at t=%.3fs",
                        t_t, entangle_time)
            continue
        m_t, s_t = snapshots[t_t]
        try:
            _finish_hybrid(run_dirs[t_t], config, t_t, m_t, s_t, pe0,
                           records[t_t], entangle_time, override_entanglement)
            completed.append(t_t)
        except FemMpmError as exc:
            log.error("hybrid run at t_T=%gs failed: %s", t_t, exc)
            _write_metadata(run_dirs[t_t] / "metadata.json", config, {
                "label": _label(t_t), "mode": "hybrid", "transfer_time": t_t,
                "status": "unstable", "error": str(exc),
            })
    if not completed:
        raise FemMpmError("no hybrid run in the sweep completed")

    run_pure_mpm(config, out_root)
    scenario_dir = Path(out_root) / config.scenario
    rows = build_summary(scenario_dir, config)
    write_summary(scenario_dir / "summary.csv", rows)
    return scenario_dir


SUMMARY_COLUMNS = ("label", "t_T", "t_T_over_tau_c", "R", "R_N", "R_N_error",
                   "H_c", "H_c_error", "RMSE", "ratio_avg", "eps_q_avg",
                   "ratio_min", "zone_ok")


def _quality_from_fem_frames(run_dir):
    """Mesh quality at the transfer instant, recomputed from frame files."""
    femdir = Path(run_dir) / "fem"
    frames = sorted(femdir.glob("gauss_*.txt"))
    if not frames:
        return None
    last = frames[-1]
    index = last.stem.split("_")[1]
    ref = meshmod.read_mesh_snapshot(femdir / "reference_mesh.txt")
    mesh = meshmod.read_mesh_snapshot(femdir / f"mesh_{index}.txt",
                                      reference_coords=ref.node_coords)
    data = np.atleast_2d(np.loadtxt(last, skiprows=1))
    n_g = int(data[:, 1].max()) + 1
    state_like = _FrameState(
        gauss=StressStrainState(data[:, 4:8],
                                data[:, 8:12], data[:, 12]),
        gauss_order=int(round(math.sqrt(n_g))))
    return analysis.mesh_quality(state_like, mesh)


@dataclass
class _FrameState:
    gauss: StressStrainState
    gauss_order: int


def _final_profile(run_dir):
    """(profile, max particle x) from the last particle frame of a run."""
    mpmdir = Path(run_dir) / "mpm"
    frames = sorted(mpmdir.glob("particles_*.txt"))
    if not frames:
        return None, math.nan
    data = read_mpm_frame(frames[-1])
    profile = analysis.surface_profile(data["x"][:, 0], data["x"][:, 1])
    return profile, float(data["x"][:, 0].max())


def build_summary(scenario_dir, config):
    """Table of final-geometry errors per run, vs the earliest transfer."""
    scenario_dir = Path(scenario_dir)
    entries = []
    for d in sorted(scenario_dir.iterdir()):
        if not d.is_dir():
            continue
        if d.name.startswith("tT"):
            entries.append((float(d.name[2:]), d.name, d))
        elif d.name == "pure_mpm":
            entries.append((math.inf, d.name, d))
    entries.sort()
    if not entries:
        raise ConfigError(f"no run directories under {scenario_dir}")

    def usable(d):
        meta = d / "metadata.json"
        if meta.exists():
            if json.loads(meta.read_text()).get("status") == "unstable":
                return False
        return True

    entries = [(t, label, d) for t, label, d in entries if usable(d)]
    if not entries:
        raise ConfigError(f"no completed runs under {scenario_dir}")
    ref_dir = entries[0][2]
    ref_profile, ref_extent = _final_profile(ref_dir)
    p_size = config.particle_size()
    length0 = config.initial_width
    tau_c = config.tau_c()
    rows = []
    for t_t, label, d in entries:
        profile, extent = _final_profile(d)
        if profile is None:
            continue
        # the deposit front comes from the binned profile toe: a lone
        # stray particle must not drag the tabulated runout (the raw
        # max-x extent still drives the R_N time series)
        runout = profile.toe_x - length0
        r_n = runout / length0
        h_c = profile.elevation[0]
        is_ref = d == ref_dir
        ref_runout = ref_profile.toe_x - length0
        rmse = analysis.rmse_profile(profile, ref_profile, p_size)
        quality = _quality_from_fem_frames(d)
        row = {
            "label": label,
            "t_T": "" if math.isinf(t_t) else f"{t_t:.17g}",
            "t_T_over_tau_c": "" if math.isinf(t_t) else f"{t_t / tau_c:.17g}",
            "R": f"{runout:.17g}",
            "R_N": f"{r_n:.17g}",
            "R_N_error": "" if is_ref else
                f"{(runout - ref_runout) / ref_runout:.17g}",
            "H_c": f"{h_c:.17g}",
            "H_c_error": "" if is_ref else
                f"{(h_c - ref_profile.elevation[0]) / ref_profile.elevation[0]:.17g}",
            "RMSE": "" if is_ref else f"{rmse:.17g}",
            "ratio_avg": "" if quality is None else f"{quality.ratio_avg:.17g}",
            "eps_q_avg": "" if quality is None else f"{quality.eps_q_avg:.17g}",
            "ratio_min": "" if quality is None else f"{quality.ratio_min:.17g}",
            "zone_ok": "" if quality is None else str(int(
                analysis.transfer_zone_check(quality.ratio_avg,
                                             quality.eps_q_avg)[0])),
        }
        rows.append(row)
    return rows


def write_summary(path, rows):
    with open(path, "w") as fh:
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(row[c] for c in SUMMARY_COLUMNS) + "\n")


def read_summary(path):
    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            rows.append(dict(zip(header, line.rstrip("\n").split(","))))
    return rows


def rebuild_summary(scenario_dir, config):
    """Recreate summary.csv purely from the dumped frame files."""
    scenario_dir = Path(scenario_dir)
    rows = build_summary(scenario_dir, config)
    write_summary(scenario_dir / "summary.csv", rows)
    return rows
