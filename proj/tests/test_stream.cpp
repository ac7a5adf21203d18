#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include <gtest/gtest.h>

#include "pam/errors.hpp"
#include "pam/stream.hpp"

using namespace pam;

namespace {

StreamSpec small_spec(Generator g, std::uint64_t seed = 17) {
    StreamSpec s;
    s.generator = g;
    s.num_tasks = 4;
    s.classes_per_task = 2;
    s.samples_per_class = 30;
    s.test_samples_per_class = 25;
    s.input_dim = 6;
    s.master_seed = seed;
    return s;
}

}  // namespace

TEST(Stream, SameSeedIsBitIdentical) {
    for (Generator g : {Generator::gauss_split, Generator::rot_moons, Generator::perm_features}) {
        EXPECT_EQ(generate(small_spec(g)), generate(small_spec(g))) << to_string(g);
    }
}

TEST(Stream, DifferentSeedDiffers) {
    EXPECT_NE(generate(small_spec(Generator::gauss_split, 1))[0].train,
              generate(small_spec(Generator::gauss_split, 2))[0].train);
}

TEST(Stream, GaussSplitClassIdsAreDisjoint) {
    StreamSpec s = small_spec(Generator::gauss_split);
    s.num_tasks = 5;
    const auto tasks = generate(s);
    std::set<int> all;
    for (const auto& t : tasks) {
        ASSERT_EQ(t.classes.size(), 2U);
        for (int c : t.classes) EXPECT_TRUE(all.insert(c).second) << "class " << c << " repeated";
        EXPECT_EQ(std::set<int>(t.train.labels.begin(), t.train.labels.end()),
                  std::set<int>(t.classes.begin(), t.classes.end()));
        EXPECT_EQ(std::set<int>(t.test.labels.begin(), t.test.labels.end()),
                  std::set<int>(t.classes.begin(), t.classes.end()));
    }
    EXPECT_EQ(all, (std::set<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
    EXPECT_EQ(s.total_classes(), 10);
}

TEST(Stream, RandomAccessMatchesSequential) {
    for (Generator g : {Generator::gauss_split, Generator::rot_moons, Generator::perm_features}) {
        const StreamSpec s = small_spec(g);
        const auto all = generate(s);
        for (int t = s.num_tasks; t >= 1; --t) EXPECT_EQ(generate_task(s, t), all[static_cast<std::size_t>(t - 1)]);
    }
}

TEST(Stream, RotMoonsIsRotatedFirstTask) {
    const StreamSpec s = small_spec(Generator::rot_moons);
    const auto tasks = generate(s);
    const double step = std::numbers::pi / s.num_tasks;
    for (std::size_t t = 1; t < tasks.size(); ++t) {
        const double a = static_cast<double>(t) * step;
        for (const auto* pair : {&tasks[0].train, &tasks[0].test}) {
            const Batch& base = *pair;
            const Batch& rotated = pair == &tasks[0].train ? tasks[t].train : tasks[t].test;
            ASSERT_EQ(base.size(), rotated.size());
            for (std::size_t n = 0; n < base.size(); ++n) {
                const double x = base.inputs(n, 0);
                const double y = base.inputs(n, 1);
                EXPECT_NEAR(rotated.inputs(n, 0), std::cos(a) * x - std::sin(a) * y, 1e-12);
                EXPECT_NEAR(rotated.inputs(n, 1), std::sin(a) * x + std::cos(a) * y, 1e-12);
                for (std::size_t k = 2; k < s.input_dim; ++k) EXPECT_EQ(rotated.inputs(n, k), base.inputs(n, k));
                EXPECT_EQ(rotated.labels[n], base.labels[n]);
            }
        }
    }
}

TEST(Stream, PermFeaturesPermutesColumns) {
    const StreamSpec s = small_spec(Generator::perm_features);
    const auto tasks = generate(s);
    const Matrix& a = tasks[0].train.inputs;
    const Matrix& b = tasks[2].train.inputs;
    // Every column of task 3 equals some column of task 1.
    for (std::size_t k = 0; k < s.input_dim; ++k) {
        bool found = false;
        for (std::size_t j = 0; j < s.input_dim && !found; ++j) {
            bool same = true;
            for (std::size_t n = 0; n < a.rows && same; ++n) same = a(n, j) == b(n, k);
            found = same;
        }
        EXPECT_TRUE(found) << "column " << k;
    }
}

TEST(Stream, TrainAndTestRowsAreDisjoint) {
    for (Generator g : {Generator::gauss_split, Generator::rot_moons, Generator::perm_features}) {
        for (const auto& t : generate(small_spec(g))) {
            std::set<std::vector<double>> train_rows;
            for (std::size_t n = 0; n < t.train.size(); ++n) {
                auto r = t.train.inputs.row(n);
                train_rows.emplace(r.begin(), r.end());
            }
            for (std::size_t n = 0; n < t.test.size(); ++n) {
                auto r = t.test.inputs.row(n);
                EXPECT_FALSE(train_rows.contains(std::vector<double>(r.begin(), r.end())));
            }
        }
    }
}

TEST(Stream, PerClassCounts) {
    for (const auto& t : generate(small_spec(Generator::gauss_split))) {
        for (int c : t.classes) {
            EXPECT_EQ(std::count(t.train.labels.begin(), t.train.labels.end(), c), 30);
            EXPECT_EQ(std::count(t.test.labels.begin(), t.test.labels.end(), c), 25);
        }
    }
}

TEST(Stream, InvalidSpecThrows) {
    StreamSpec s = small_spec(Generator::gauss_split);
    s.num_tasks = 1;
    EXPECT_THROW(generate(s), ConfigError);
    s = small_spec(Generator::gauss_split);
    s.samples_per_class = 0;
    EXPECT_THROW(generate(s), ConfigError);
    s = small_spec(Generator::rot_moons);
    s.classes_per_task = 3;
    EXPECT_THROW(generate(s), ConfigError);
    EXPECT_THROW(parse_generator("spirals"), ConfigError);
}

TEST(Stream, CsvRoundTripIsExact) {
    const auto t = generate_task(small_spec(Generator::gauss_split), 2);
    const auto path = std::filesystem::temp_directory_path() / "pam_test_task_2_train.csv";
    write_batch_csv(t.train, path);
    EXPECT_EQ(read_batch_csv(path), t.train);
    std::filesystem::remove(path);
}

TEST(Stream, GenericMixtureIsDeterministic) {
    EXPECT_EQ(generic_mixture(5, 4, 10, 0.6, 3.0, 9), generic_mixture(5, 4, 10, 0.6, 3.0, 9));
    EXPECT_EQ(generic_mixture(5, 4, 10, 0.6, 3.0, 9).size(), 40U);
}
