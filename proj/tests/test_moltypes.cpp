#include "doctest.h"

#include <cmath>
#include <set>

#include "fieldgen/errors.hpp"
#include "fieldgen/moltypes.hpp"
#include "fieldgen/rng.hpp"

using namespace fieldgen;

TEST_CASE("element symbols are bijective with indices") {
    const char* expected[8] = {"C", "O", "N", "S", "F", "Cl", "P", "Br"};
    for (int i = 0; i < kElementCount; ++i) {
        Element e = static_cast<Element>(i);
        CHECK(std::string(element_symbol(e)) == expected[i]);
        auto back = element_from_symbol(expected[i]);
        REQUIRE(back.has_value());
        CHECK(static_cast<int>(*back) == i);
    }
    CHECK(!element_from_symbol("X").has_value());
    CHECK(!element_from_symbol("c").has_value());
    CHECK(!element_from_symbol("").has_value());
}

TEST_CASE("parse_molecule handles the line format") {
    Molecule m = parse_molecule("C 0 0 0");
    REQUIRE(m.size() == 1);
    CHECK(m.atoms[0].element == Element::C);
    CHECK(m.atoms[0].position.norm() == 0.0);

    m = parse_molecule("C 0 0 0\nO 1.2 0 0");
    REQUIRE(m.size() == 2);
    CHECK(m.atoms[1].element == Element::O);
    CHECK(m.atoms[1].position.x == doctest::Approx(1.2));

    m = parse_molecule("# comment\n\nBr -1.5 2.0 3e-1\n");
    REQUIRE(m.size() == 1);
    CHECK(m.atoms[0].element == Element::Br);
    CHECK(m.atoms[0].position.z == doctest::Approx(0.3));

    CHECK_THROWS_AS(parse_molecule("X 0 0 0"), ParseError);
    CHECK_THROWS_AS(parse_molecule("C 0 zero 0"), ParseError);
    CHECK_THROWS_AS(parse_molecule("C 0 0"), ParseError);
    CHECK_THROWS_AS(parse_molecule(""), ParseError);
    CHECK_THROWS_AS(parse_molecule("# only comments\n"), ParseError);
}

TEST_CASE("write_molecule round trips") {
    Molecule one;
    one.atoms.push_back({Element::C, {0, 0, 0}});
    CHECK(write_molecule(one) == "C 0.000000000 0.000000000 0.000000000\n");

    ToyConfig cfg;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        cfg.modality = static_cast<int>(seed % 3);
        Complex cx = gen_toy_complex(seed, cfg);
        Molecule back = parse_molecule(write_molecule(cx.binder));
        REQUIRE(back.size() == cx.binder.size());
        for (int i = 0; i < back.size(); ++i) {
            CHECK(back.atoms[i].element == cx.binder.atoms[i].element);
            CHECK(distance(back.atoms[i].position, cx.binder.atoms[i].position) <= 1e-9);
        }
    }
}

TEST_CASE("parse_complex requires all three sections") {
    const char* ok =
        "[MODALITY] 0\n"
        "[BINDER]\nC 0 0 0\n"
        "[TARGET]\nN 5 0 0\n";
    Complex cx = parse_complex(ok);
    CHECK(cx.modality == 0);
    CHECK(cx.binder.size() == 1);
    CHECK(cx.target.size() == 1);
    validate_complex(cx, 3);

    CHECK_THROWS_AS(parse_complex("[MODALITY] 0\n[BINDER]\nC 0 0 0\n"), ParseError);
    CHECK_THROWS_AS(parse_complex("[BINDER]\nC 0 0 0\n[TARGET]\nC 1 1 1\n"), ParseError);
    CHECK_THROWS_AS(
        parse_complex("[MODALITY] 0\n[MODALITY] 1\n[BINDER]\nC 0 0 0\n[TARGET]\nC 1 1 1\n"),
        ParseError);
    CHECK_THROWS_AS(parse_complex("[MODALITY] -1\n[BINDER]\nC 0 0 0\n[TARGET]\nC 1 1 1\n"),
                    ParseError);

    Complex bad = cx;
    bad.modality = 5;
    CHECK_THROWS_AS(validate_complex(bad, 3), ParseError);
}

TEST_CASE("complex round trips through text") {
    ToyConfig cfg;
    cfg.modality = 2;
    Complex cx = gen_toy_complex(7, cfg);
    Complex back = parse_complex(write_complex(cx));
    CHECK(back.modality == cx.modality);
    REQUIRE(back.target.size() == cx.target.size());
    for (int i = 0; i < back.target.size(); ++i)
        CHECK(distance(back.target.atoms[i].position, cx.target.atoms[i].position) <= 1e-9);
}

TEST_CASE("apply_transform is a rigid motion") {
    Molecule m;
    m.atoms.push_back({Element::C, {0, 0, 0}});
    m.atoms.push_back({Element::O, {1.2, 0, 0}});
    m.atoms.push_back({Element::N, {0, 1.4, 0.3}});

    RigidTransform identity;
    Molecule same = apply_transform(m, identity);
    for (int i = 0; i < m.size(); ++i)
        CHECK(distance(same.atoms[i].position, m.atoms[i].position) == 0.0);

    RigidTransform shift;
    shift.translation = {1, 0, 0};
    CHECK(apply_transform(m, shift).atoms[0].position.x == doctest::Approx(1.0));

    for (uint64_t seed = 1; seed <= 50; ++seed) {
        RigidTransform t = random_rigid_transform(seed, 1.0);
        REQUIRE(t.valid());
        Molecule moved = apply_transform(m, t);
        for (int i = 0; i < m.size(); ++i)
            for (int j = i + 1; j < m.size(); ++j) {
                double before = distance(m.atoms[i].position, m.atoms[j].position);
                double after = distance(moved.atoms[i].position, moved.atoms[j].position);
                CHECK(std::abs(before - after) <= 1e-9);
            }
    }
}

TEST_CASE("random_rigid_transform is deterministic and isotropic enough") {
    RigidTransform a = random_rigid_transform(42, 1.0);
    RigidTransform b = random_rigid_transform(42, 1.0);
    CHECK(distance(a.translation, b.translation) == 0.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(a.rotation(i, j) == b.rotation(i, j));

    RigidTransform fixed = random_rigid_transform(9, 0.0);
    CHECK(fixed.translation.norm() == 0.0);

    Vec3 mean{0, 0, 0};
    for (uint64_t seed = 0; seed < 10000; ++seed) {
        RigidTransform t = random_rigid_transform(seed, 0.0);
        mean += t.rotation.apply({0, 0, 1});
    }
    mean = mean * (1.0 / 10000.0);
    CHECK(mean.norm() < 0.05);
}

TEST_CASE("toy generator is deterministic per (seed, cfg)") {
    ToyConfig cfg;
    cfg.modality = 1;
    Complex a = gen_toy_complex(1, cfg);
    Complex b = gen_toy_complex(1, cfg);
    CHECK(write_complex(a) == write_complex(b));

    cfg.modality = 0;
    Complex c = gen_toy_complex(1, cfg);
    CHECK(write_complex(a) != write_complex(c));
}

TEST_CASE("toy modalities have the advertised graph shapes") {
    ToyConfig cfg;
    for (uint64_t seed = 0; seed < 40; ++seed) {
        cfg.modality = 0;
        CHECK(is_single_chain(gen_toy_complex(seed, cfg).binder, 1.9));
        cfg.modality = 1;
        CHECK(is_single_cycle(gen_toy_complex(seed, cfg).binder, 1.9));
        cfg.modality = 2;
        Complex branched = gen_toy_complex(seed, cfg);
        auto edges = neighbor_graph(branched.binder, 1.9);
        std::vector<int> degree(branched.binder.size(), 0);
        for (auto [i, j] : edges) {
            ++degree[i];
            ++degree[j];
        }
        CHECK(*std::max_element(degree.begin(), degree.end()) >= 3);
        CHECK(!is_single_chain(branched.binder, 1.9));
        CHECK(!is_single_cycle(branched.binder, 1.9));
    }
}

TEST_CASE("1000 toy seeds pass validation and fit the frame") {
    ToyConfig cfg;
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        cfg.modality = static_cast<int>(seed % 3);
        Complex cx = gen_toy_complex(seed, cfg);

        MoleculeValidity v = validate_molecule(cx.binder, cfg.min_dist);
        CHECK(v.finite);
        CHECK(v.min_distance_ok);
        CHECK(v.non_empty);
        CHECK(cx.binder.size() >= cfg.min_atoms);
        CHECK(cx.binder.size() <= cfg.max_atoms);

        // Binder is bbox-centered and must fit a 16 A box with margin.
        for (const auto& a : cx.binder.atoms) {
            CHECK(std::abs(a.position.x) < 7.5);
            CHECK(std::abs(a.position.y) < 7.5);
            CHECK(std::abs(a.position.z) < 7.5);
        }
        Vec3 center = cx.binder.bbox_center();
        CHECK(center.norm() < 1e-9);

        CHECK(cx.target.size() >= cfg.target_min_atoms);
        CHECK(cx.target.size() <= cfg.target_max_atoms);
        CHECK(validate_molecule(cx.target, cfg.min_dist).min_distance_ok);

        double gap = 1e300;
        for (const auto& p : cx.binder.atoms)
            for (const auto& q : cx.target.atoms)
                gap = std::min(gap, distance(p.position, q.position));
        CHECK(gap >= cfg.target_gap_min);
        CHECK(gap <= cfg.target_gap_max);

        for (const auto& a : cx.target.atoms) {
            int ch = static_cast<int>(a.element);
            CHECK(ch < 4);  // target channels are C,O,N,S only
        }
    }
}

TEST_CASE("toy generator rejects infeasible configs") {
    ToyConfig cfg;
    cfg.modality = 5;
    CHECK_THROWS_AS(gen_toy_complex(0, cfg), ConfigError);

    cfg.modality = 0;
    cfg.radius = 0.5;  // cannot hold even two atoms at step 1.5
    cfg.min_atoms = cfg.max_atoms = 12;
    CHECK_THROWS_AS(gen_toy_complex(0, cfg), ConfigError);
}

TEST_CASE("rng streams are reproducible and decorrelated") {
    Rng a = Rng::derive(7, 3, 1);
    Rng b = Rng::derive(7, 3, 1);
    Rng c = Rng::derive(7, 3, 2);
    bool all_equal = true;
    bool any_equal_cross = false;
    for (int i = 0; i < 100; ++i) {
        uint64_t va = a.u64(), vb = b.u64(), vc = c.u64();
        all_equal = all_equal && (va == vb);
        any_equal_cross = any_equal_cross || (va == vc);
    }
    CHECK(all_equal);
    CHECK(!any_equal_cross);

    Rng n(123);
    double sum = 0, sum2 = 0;
    const int kDraws = 200000;
    for (int i = 0; i < kDraws; ++i) {
        double x = n.normal();
        sum += x;
        sum2 += x * x;
    }
    double mean = sum / kDraws;
    double var = sum2 / kDraws - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}
