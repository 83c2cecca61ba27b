// Copyright 2026 The LinChain Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdint>

#include <gtest/gtest.h>

#include "linchain/matrix.hpp"
#include "linchain/rng.hpp"

namespace linchain {
namespace {

// Reference values from tests/oracles/reference_values.py.
TEST(RngTest, SplitMixReferenceVector) {
  Rng rng(1234567);
  const std::uint64_t expected[] = {6457827717110365317ULL, 3203168211198807973ULL, 9817491932198370423ULL,
                                    4593380528125082431ULL, 16408922859458223821ULL};
  for (std::uint64_t e : expected) EXPECT_EQ(rng.next_u64(), e);

  Rng zero(0);
  EXPECT_EQ(zero.next_u64(), 16294208416658607535ULL);
  EXPECT_EQ(zero.next_u64(), 7960286522194355700ULL);
  EXPECT_EQ(zero.next_u64(), 487617019471545679ULL);
}

TEST(RngTest, UnitDrawsInHalfOpenInterval) {
  Rng rng(7);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.next_unit();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(RngTest, BelowStaysInRange) {
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) ASSERT_LT(rng.below(7), 7u);
}

TEST(MatrixTest, RejectsBadDataLength) {
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(MatmulTest, IdentityIsNeutral) {
  Rng rng(1);
  const Matrix m = uniform_matrix(3, 3, -1, 1, rng);
  EXPECT_EQ(matmul(Matrix::identity(3), m), m);
  EXPECT_EQ(matmul(m, Matrix::identity(3)), m);
}

TEST(MatmulTest, ZerosAnnihilate) {
  Rng rng(2);
  const Matrix m = uniform_matrix(3, 4, -1, 1, rng);
  EXPECT_EQ(matmul(Matrix::zeros(2, 3), m), Matrix::zeros(2, 4));
}

TEST(MatmulTest, HandComputedProduct) {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{5, 6}, {7, 8}};
  EXPECT_EQ(matmul(a, b), (Matrix{{19, 22}, {43, 50}}));
}

TEST(MatmulTest, ShapeErrorNamesBothShapes) {
  try {
    matmul(Matrix(2, 3), Matrix(4, 5));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos);
    EXPECT_NE(msg.find("4x5"), std::string::npos);
  }
}

TEST(TransposeTest, Basics) {
  EXPECT_EQ(transpose(Matrix::identity(4)), Matrix::identity(4));
  EXPECT_EQ(transpose(Matrix::zeros(2, 5)), Matrix::zeros(5, 2));
  EXPECT_EQ(transpose(Matrix{{1, 2, 3}}), (Matrix{{1}, {2}, {3}}));
}

TEST(TransposeTest, InvolutionOnRandomMatrices) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const Matrix m = uniform_matrix(1 + rng.below(9), 1 + rng.below(9), -1, 1, rng);
    EXPECT_EQ(transpose(transpose(m)), m);
  }
}

TEST(MaxAbsDiffTest, Examples) {
  Rng rng(9);
  const Matrix m = uniform_matrix(3, 3, -1, 1, rng);
  EXPECT_EQ(max_abs_diff(m, m), 0.0);
  EXPECT_EQ(max_abs_diff(Matrix::zeros(2, 2), Matrix::ones(2, 2)), 1.0);
  EXPECT_EQ(max_abs_diff(Matrix{{1, 5}}, Matrix{{2, 3}}), 2.0);
  EXPECT_THROW(max_abs_diff(Matrix(1, 2), Matrix(2, 1)), ShapeError);
}

TEST(MatmulProperty, AssociativityWithinTolerance) {
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    const std::size_t m = 1 + rng.below(32), k = 1 + rng.below(32), l = 1 + rng.below(32), n = 1 + rng.below(32);
    const Matrix a = uniform_matrix(m, k, -1, 1, rng);
    const Matrix b = uniform_matrix(k, l, -1, 1, rng);
    const Matrix c = uniform_matrix(l, n, -1, 1, rng);
    const double scale = static_cast<double>(k * l);
    ASSERT_LE(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))), 1e-12 * scale);
  }
}

TEST(MatmulProperty, TransposeOfProduct) {
  Rng rng(12);
  for (int t = 0; t < 200; ++t) {
    const std::size_t m = 1 + rng.below(8), k = 1 + rng.below(8), n = 1 + rng.below(8);
    const Matrix a = uniform_matrix(m, k, -1, 1, rng);
    const Matrix b = uniform_matrix(k, n, -1, 1, rng);
    ASSERT_LE(max_abs_diff(transpose(matmul(a, b)), matmul(transpose(b), transpose(a))), 1e-14);
  }
}

TEST(KaimingTest, BoundFor1024Inputs) {
  EXPECT_NEAR(kaiming_bound(1024), 0.07654655446197431, 1e-16);
  Rng rng(42);
  const double b = kaiming_bound(1024);
  for (int rep = 0; rep < 25; ++rep) {  // 25 * 1024 * 16 > 1e4 draws
    const Matrix m = kaiming_uniform(1024, 16, rng);
    ASSERT_LE(max_abs(m), b);
  }
}

TEST(KaimingTest, UnitBoundForSixInputs) {
  EXPECT_DOUBLE_EQ(kaiming_bound(6), 1.0);
  Rng rng(42);
  const Matrix m = kaiming_uniform(6, 1, rng);
  // Frozen from tests/oracles/reference_values.py.
  const double expected[] = {0.4831297575436466, -0.6801792142461598, -0.4427977394897227,
                             -0.31161856695272494, -0.9239396629195076, 0.7364561530930647};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(m(i, 0), expected[i]);
}

TEST(KaimingTest, SameSeedSameMatrix) {
  Rng r1(42), r2(42);
  EXPECT_EQ(kaiming_uniform(17, 5, r1), kaiming_uniform(17, 5, r2));
}

TEST(KaimingTest, MeanWithinThreeStandardErrors) {
  Rng rng(2024);
  const std::size_t fan_in = 50;
  const double b = kaiming_bound(fan_in);
  const Matrix m = kaiming_uniform(fan_in, 2000, rng);  // 1e5 draws
  double sum = 0.0;
  for (double v : m.data()) {
    ASSERT_LE(std::abs(v), b);
    sum += v;
  }
  const double n = static_cast<double>(m.size());
  const double standard_error = (b / std::sqrt(3.0)) / std::sqrt(n);
  EXPECT_LE(std::abs(sum / n), 3.0 * standard_error);
}

TEST(MatrixTest, EyeIsRectangularIdentity) {
  const Matrix e = Matrix::eye(2, 3);
  EXPECT_EQ(e, (Matrix{{1, 0, 0}, {0, 1, 0}}));
}

}  // namespace
}  // namespace linchain
