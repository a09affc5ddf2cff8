"""Rebuild a continuous wind field from a handful of swarm trajectories.

Five vehicles climb through a sheared, veered, lightly turbulent
column; the drag oracle turns their logs into point wind estimates,
and a coordinate network distills those into a queryable 4-D field.
Desk-scale settings keep this to about a minute.
"""

import numpy as np

from swarmwind.meanflow import MeanWindParams, WindModel, mean_wind_ne
from swarmwind.mission import MissionConfig, run_mission
from swarmwind.pinn import ReconDomain, extract_products, train_pinn
from swarmwind.pipeline import filter_to_domain, observations_from_oracle
from swarmwind.turbulence import TurbulenceSpec, synthesize_field
from swarmwind.vehicle import VehicleParams

params = MeanWindParams(u_ref=5.0)
field = synthesize_field(TurbulenceSpec(grid=(16, 16, 32), n_modes=128,
                                        target_sigma=0.3, rng_seed=3))
wind = WindModel(params, field)

logs = run_mission(MissionConfig(wind=wind, n_uas=5, duration=60.0))
print(f"flew {len(logs)} vehicles, {len(logs[0].data)} log rows each")

coords, values, _ = observations_from_oracle(logs, VehicleParams())
domain = ReconDomain(t=(0.0, 60.0))
coords, values = filter_to_domain(domain, coords, values)
print(f"{len(coords)} wind observations inside the reconstruction box")

model, history = train_pinn(coords, values, domain=domain, steps=400, seed=0)
print(f"final training loss {history['best'][-1]:.4f}")

# compare a vertical profile against the analytic mean wind
zs = np.linspace(20.0, 140.0, 7)
profile = extract_products(model, "profile", x=0.0, y=0.0, t=30.0, z_values=zs)
for z, row in zip(zs, profile):
    un, ue = mean_wind_ne(z, params)
    print(f"  z {z:6.1f} m: recon N {row[0]:+.2f} E {row[1]:+.2f}   "
          f"mean wind N {un:+.2f} E {ue:+.2f}")
