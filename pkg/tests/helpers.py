from src.evolve.engine import TEBDEngine
from src.model.lattice import LatticeModel


def lattice(n_sites=3, fock_cutoff=3, J=0.0, U=0.0, gamma1=0.0, gamma2=0.0, delta_z=1.0):
    return LatticeModel(n_sites=n_sites, fock_cutoff=fock_cutoff, delta_z=delta_z,
                        J=J, U=U, gamma1=gamma1, gamma2=gamma2)


def evolve(state, model, dt, t_end, order=2):
    engine = TEBDEngine(model, dt, order, log_every=0)
    for _ in range(int(round(t_end / dt))):
        engine.step(state)
    return state
