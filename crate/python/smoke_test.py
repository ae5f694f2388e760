"""Smoke test for the maxres_py extension module.

Build and install it first, for example:

    cd crates/python && maturin develop --release
"""

import math

import maxres_py

LINEAR = """
{"input_dim": 2, "input_bounds": [[0, 1], [0, 1]],
 "layers": [{"kind": "linear_output", "weights": [[0, 0], [1, 0], [0, 1]]},
            {"kind": "softmax"}]}
"""


def main():
    net = maxres_py.Network.from_json(LINEAR)
    assert net.input_dim == 2 and net.num_classes == 2, net

    probs = net.forward([1.0, 0.0])[-1]
    assert abs(probs[0] - 1 / (1 + math.exp(-1))) < 1e-9, probs

    phi = maxres_py.compute_phi(net, 1, alpha=math.e, k=1)
    assert phi["status"] == "optimal", phi
    assert abs(phi["phi"] - 1.0) < 1e-6, phi
    assert phi["witness_valid"]

    assert maxres_py.compute_phi(net, 1, alpha=5.0, k=1)["phi"] == "inf"

    xi = maxres_py.compute_xi(net, alpha=1.5, k=1)
    assert abs(xi["xi"] - math.log(1.5)) < 1e-6, xi

    robust = maxres_py.check_local_robustness(net, [1.0, 0.0], 1, 0.5, k=1)
    assert robust["verdict"] == "robust", robust
    violated = maxres_py.check_local_robustness(net, [1.0, 0.0], 1, 1.0, k=1)
    assert violated["verdict"] == "violated", violated

    alpha = maxres_py.compute_max_alpha(net, 1)
    assert abs(alpha["alpha_max"] - math.e) < 1e-6, alpha

    estimate, a, eps, resolution = maxres_py.grid_phi(net, 1, math.e, 1, step=0.05)
    assert abs(estimate - phi["phi"]) <= resolution

    assert net.bounds().startswith("# layer node")
    print("smoke test passed")


if __name__ == "__main__":
    main()
