"""Cross-entropy scores of exact, uniform and mixed samplers on the 2x2 torus."""
from fhsim import nearflo, xeb
from fhsim.initial_state import default_initial_state
from fhsim.lattice import build_lattice

lat = build_lattice(2, 2)
init = default_initial_state(lat)
model = xeb.XebModel(nearflo.propagator(lat, 1.0), init)

for f in (0.0, 0.25, 0.5, 0.75, 1.0):
    s = xeb.sample_model(model, 10_000, seed=int(100 * f), epsilon=f)
    fit = xeb.fit_epsilon(s, model)
    sc = xeb.log_xeb(s, model.with_epsilon(max(fit.epsilon, 1e-3)))
    print(f"true eps {f:.2f}  fitted {fit.epsilon:.3f}  XE {sc.value:.3f} +- {sc.se:.3f} bits")
