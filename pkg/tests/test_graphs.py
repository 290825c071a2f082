import numpy as np
import pytest
from scipy import stats

from episim.compartments import ConfigurationError
from episim.graphs import (
    ContactGraph,
    complete_graph,
    generate_graph,
    load_edge_list,
    sample_contacts,
    sample_effective_contacts,
)


# --- generation ------------------------------------------------------------

def test_empty_random_graph():
    g = generate_graph("erdos_renyi", n=100, seed=1, p_edge=0.0)
    assert g.n == 100 and g.edge_count == 0


def test_full_random_graph():
    g = generate_graph("erdos_renyi", n=10, seed=1, p_edge=1.0)
    assert g.edge_count == 45


def test_preferential_attachment_edge_count():
    # seeded with an (m+1)-clique: C(4,2) + 3*(5000-4) = 3*(5000-3)+3
    g = generate_graph("barabasi_albert", n=5000, seed=7, m=3)
    assert g.edge_count == 3 * (5000 - 3) + 3 == 14994


def test_generation_deterministic():
    a = generate_graph("barabasi_albert", n=300, seed=11, m=2)
    b = generate_graph("barabasi_albert", n=300, seed=11, m=2)
    c = generate_graph("barabasi_albert", n=300, seed=12, m=2)
    assert all(np.array_equal(x, y) for x, y in zip(a.neighbors, b.neighbors))
    assert any(not np.array_equal(x, y)
               for x, y in zip(a.neighbors, c.neighbors))


def test_heavy_tail_versus_uniform_degrees():
    # matched mean degree ~6; the attachment model should consistently
    # produce a larger hub than independent random edges
    wins = 0
    for seed in range(20):
        ba = generate_graph("barabasi_albert", n=1000, seed=seed, m=3)
        er = generate_graph("erdos_renyi", n=1000, seed=seed,
                            p_edge=6.0 / 999)
        if ba.degrees.max() > er.degrees.max():
            wins += 1
    assert wins >= 18


def test_generation_parameter_validation():
    with pytest.raises(ConfigurationError):
        generate_graph("barabasi_albert", n=3, seed=0, m=3)
    with pytest.raises(ConfigurationError):
        generate_graph("erdos_renyi", n=10, seed=0, p_edge=1.5)
    with pytest.raises(ConfigurationError):
        generate_graph("small_world", n=10, seed=0)


def test_no_self_loops_rejected():
    with pytest.raises(ConfigurationError, match="self-loop"):
        ContactGraph.from_edges(3, [(0, 0)])


# --- contact sampling ------------------------------------------------------

def test_inactive_node_has_no_contacts():
    g = generate_graph("erdos_renyi", n=50, seed=3, p_edge=0.2)
    g.activation[:] = 0.0
    rng = np.random.default_rng(0)
    assert sample_contacts(7, g, p=0.5, rng=rng).size == 0


def test_full_activity_local_only():
    # a_v=1, p=0: every edge fires exactly once, hitting its endpoint
    g = generate_graph("erdos_renyi", n=200, seed=5, p_edge=0.05)
    rng = np.random.default_rng(1)
    node = int(np.argmax(g.degrees))
    contacts = sample_contacts(node, g, p=0.0, rng=rng)
    assert len(contacts) == g.degrees[node]
    assert sorted(contacts.tolist()) == g.neighbors[node].tolist()


def test_long_range_uniform_over_others():
    # p=1 on a complete graph: targets should be uniform over everyone else
    n = 1000
    g = complete_graph(n)
    rng = np.random.default_rng(42)
    node = 123
    draws = []
    while len(draws) < 10**5:
        draws.extend(sample_contacts(node, g, p=1.0, rng=rng).tolist())
    draws = np.array(draws[:10**5])
    assert node not in draws
    counts = np.bincount(draws, minlength=n)
    counts = np.delete(counts, node)
    _, pvalue = stats.chisquare(counts)
    assert pvalue > 0.01


def test_expected_contact_volume():
    g = generate_graph("erdos_renyi", n=400, seed=9, p_edge=0.03)
    g.activation[:] = 0.3
    rng = np.random.default_rng(7)
    node = int(np.argmax(g.degrees))
    deg = g.degrees[node]
    trials = 10_000
    total = sum(len(sample_contacts(node, g, p=0.2, rng=rng))
                for _ in range(trials))
    expected = 0.3 * deg
    stderr = np.sqrt(deg * 0.3 * 0.7 / trials)
    assert abs(total / trials - expected) < 3 * stderr


def test_same_seed_same_contact_sequence():
    g = generate_graph("barabasi_albert", n=500, seed=2, m=3)
    seq_a = [sample_contacts(v, g, 0.1, np.random.default_rng(99)).tolist()
             for v in range(50)]
    seq_b = [sample_contacts(v, g, 0.1, np.random.default_rng(99)).tolist()
             for v in range(50)]
    assert seq_a == seq_b


def test_thinned_sampler_matches_filtered_distribution():
    # oracle: full sampling followed by an independent keep-coin per slot
    g = complete_graph(40)
    g.activation[:] = 0.5
    keep = 0.3
    trials = 20_000
    rng = np.random.default_rng(11)
    full_counts = np.zeros(trials)
    for i in range(trials):
        slots = sample_contacts(0, g, p=0.4, rng=rng)
        full_counts[i] = (rng.random(len(slots)) < keep).sum()
    thin_counts = np.zeros(trials)
    for i in range(trials):
        thin_counts[i] = len(sample_effective_contacts(0, g, p=0.4, keep=keep,
                                                       rng=rng))
    # same mean and variance within sampling error
    se_mean = full_counts.std() / np.sqrt(trials)
    assert abs(full_counts.mean() - thin_counts.mean()) < 4 * se_mean
    assert abs(full_counts.var() - thin_counts.var()) < 0.35


# --- file import -----------------------------------------------------------

def test_edge_list_round_trip(tmp_path):
    edge_file = tmp_path / "graph.txt"
    edge_file.write_text("0 1\n1 2\n2 3\n")
    attr_file = tmp_path / "attrs.csv"
    attr_file.write_text(
        "node_id,age,activity\n0,10,0.5\n1,20,0.5\n2,30,1.0\n3,40,1.0\n")
    g = load_edge_list(edge_file, attr_file)
    assert g.n == 4 and g.edge_count == 3
    assert g.attributes["age"].tolist() == [10, 20, 30, 40]
    assert g.activation.tolist() == [0.5, 0.5, 1.0, 1.0]


def test_edge_list_errors_carry_line_numbers(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("0 1\n2\n")
    with pytest.raises(ConfigurationError, match="bad.txt:2"):
        load_edge_list(bad)
    loop = tmp_path / "loop.txt"
    loop.write_text("0 1\n3 3\n")
    with pytest.raises(ConfigurationError, match="loop.txt:2.*self-loop"):
        load_edge_list(loop)


def test_attribute_table_must_cover_all_nodes(tmp_path):
    edge_file = tmp_path / "graph.txt"
    edge_file.write_text("0 1\n1 2\n")
    attr_file = tmp_path / "attrs.csv"
    attr_file.write_text("node_id,age\n0,10\n1,20\n")
    with pytest.raises(ConfigurationError, match="node 2"):
        load_edge_list(edge_file, attr_file)
