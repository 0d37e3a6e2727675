import numpy as np
from django.test import SimpleTestCase

from search.exceptions import UsageError
from search.utils import child_rng, kendall_tau, mean_sd, paired_sign_test, seed_list, standard_error


class StatisticsTests(SimpleTestCase):
    def test_mean_and_sample_deviation(self):
        mean, sd = mean_sd([1.0, 2.0, 3.0])
        self.assertEqual(mean, 2.0)
        self.assertEqual(sd, 1.0)
        self.assertEqual(mean_sd([0.5]), (0.5, 0.0))
        self.assertAlmostEqual(standard_error([1.0, 2.0, 3.0]), 1.0 / np.sqrt(3))

    def test_empty_values(self):
        with self.assertRaises(UsageError):
            mean_sd([])

    def test_kendall_tau(self):
        self.assertAlmostEqual(kendall_tau([1, 2, 3, 4], [10, 20, 30, 40]), 1.0)
        self.assertAlmostEqual(kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]), -1.0)
        self.assertEqual(kendall_tau([1, 1, 1], [1, 2, 3]), 0.0)

    def test_sign_test(self):
        result = paired_sign_test([0.9] * 10, [0.8] * 10)
        self.assertEqual((result.wins, result.losses, result.ties), (10, 0, 0))
        self.assertAlmostEqual(result.p_value, 0.5 ** 10)
        self.assertEqual(paired_sign_test([0.5, 0.5], [0.5, 0.5]).p_value, 1.0)


class SeedTests(SimpleTestCase):
    def test_child_generator_leaves_the_parent_alone(self):
        a = np.random.default_rng(7)
        b = np.random.default_rng(7)
        child_rng(a).random(5)
        self.assertEqual(a.random(), b.random())

    def test_seed_list(self):
        self.assertEqual(seed_list(3, offset=10), [10, 11, 12])
