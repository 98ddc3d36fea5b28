#include <gtest/gtest.h>

#include <map>

#include "fruitnet/executor.hpp"
#include "fruitnet/model.hpp"
#include "reference_data.hpp"
#include "test_util.hpp"

namespace fruitnet {
namespace {

using testing::random_tensor;

using testing::kConvInputs;
using testing::kConvTypes;

TEST(MobileNetTest, TraceMatchesLayerTable) {
  const ModelGraph m = build_mobilenet(true);
  const auto rows = summary_rows(m);
  std::vector<SummaryRow> conv_rows;
  std::vector<SummaryRow> tail;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (is_conv_family(m.layers[i].kind)) conv_rows.push_back(rows[i]);
    if (m.layers[i].kind == LayerKind::kGlobalAvgPool || m.layers[i].kind == LayerKind::kDense ||
        m.layers[i].kind == LayerKind::kSoftmax) {
      tail.push_back(rows[i]);
    }
  }
  ASSERT_EQ(conv_rows.size(), std::size(kConvInputs));
  for (std::size_t i = 0; i < conv_rows.size(); ++i) {
    EXPECT_EQ(conv_rows[i].input_size, kConvInputs[i]) << "row " << i + 1;
    EXPECT_EQ(conv_rows[i].type, kConvTypes[i]) << "row " << i + 1;
  }
  ASSERT_EQ(tail.size(), 3u);
  EXPECT_EQ(tail[0].type, "Avg Pool / s1");
  EXPECT_EQ(tail[0].filter, "Pool 7×7");
  EXPECT_EQ(tail[0].input_size, "7 × 7 × 1024");
  EXPECT_EQ(tail[1].type, "FC / s1");
  EXPECT_EQ(tail[1].filter, "1024×1000");
  EXPECT_EQ(tail[1].input_size, "1 × 1 × 1024");
  EXPECT_EQ(tail[2].type, "Softmax / s1");
  EXPECT_EQ(tail[2].filter, "Classifier");
  EXPECT_EQ(tail[2].input_size, "1 × 1 × 1000");
  EXPECT_EQ(m.layers.back().output_shape, (Shape{1, 1, 1000}));
}

TEST(MobileNetTest, FilterShapesOfStemAndLastBlock) {
  const ModelGraph m = build_mobilenet(false);
  EXPECT_EQ(m.params.at("conv1/kernel").shape(), (Shape{3, 3, 3, 32}));
  EXPECT_EQ(m.params.at("conv_dw_13/depthwise_kernel").shape(), (Shape{3, 3, 1024}));
  EXPECT_EQ(m.params.at("conv_pw_13/kernel").shape(), (Shape{1, 1, 1024, 1024}));
  EXPECT_EQ(m.layers.back().name, "conv_pw_13_relu");
  EXPECT_EQ(m.layers.back().output_shape, (Shape{7, 7, 1024}));
}

TEST(MobileNetTest, ParameterCensus) {
  // Reference counts of the standard alpha=1.0 network.
  const ParamCensus top = census(build_mobilenet(true));
  EXPECT_EQ(top.parameters, 4253864);
  EXPECT_EQ(top.trainable_parameters, 4231976);
  EXPECT_EQ(top.frozen_parameters, 21888);
  const ParamCensus body = census(build_mobilenet(false));
  EXPECT_EQ(body.parameters, 3228864);
  EXPECT_EQ(body.trainable_parameters, 3206976);
}

TEST(MobileNetTest, LayerCountsAndNames) {
  const ModelGraph m = build_mobilenet(false);
  EXPECT_EQ(m.layers.size(), 81u);
  int conv = 0;
  for (const auto& l : m.layers) conv += is_conv_family(l.kind);
  EXPECT_EQ(conv, 27);
  EXPECT_EQ(m.layers[0].name, "conv1");
  EXPECT_EQ(m.layers[1].name, "conv1_bn");
  EXPECT_EQ(m.layers[2].name, "conv1_relu");
  EXPECT_EQ(m.layers[3].name, "conv_dw_1");
  EXPECT_EQ(m.layers[6].name, "conv_pw_1");
}

TEST(MobileNetTest, ReducedInputStillBuilds) {
  const ModelGraph m = build_mobilenet(false, {.input_size = 64});
  EXPECT_EQ(m.layers.back().output_shape, (Shape{2, 2, 1024}));
}

TEST(BaseCnnTest, LayerCensus) {
  const ModelGraph m = build_base_cnn(6);
  std::map<LayerKind, int> counts;
  for (const auto& l : m.layers) ++counts[l.kind];
  EXPECT_EQ(counts[LayerKind::kConv], 4);
  EXPECT_EQ(counts[LayerKind::kBatchNorm], 3);
  EXPECT_EQ(counts[LayerKind::kMaxPool], 4);
  EXPECT_EQ(counts[LayerKind::kFlatten], 1);
  EXPECT_EQ(counts[LayerKind::kDense], 4);  // three hidden + classifier
  EXPECT_EQ(counts[LayerKind::kDropout], 1);
  EXPECT_EQ(counts[LayerKind::kSoftmax], 1);

  const Index widths[] = {32, 64, 128, 256};
  int c = 0;
  for (const auto& l : m.layers) {
    if (l.kind != LayerKind::kConv) continue;
    EXPECT_EQ(l.filters, widths[c++]);
    EXPECT_EQ(l.kernel_size, 3);
    EXPECT_EQ(l.stride, 1);
  }
  std::vector<Index> hidden;
  for (const auto& l : m.layers) {
    if (l.kind == LayerKind::kDense) hidden.push_back(l.units);
  }
  EXPECT_EQ(hidden, (std::vector<Index>{512, 256, 128, 6}));
  EXPECT_EQ(m.layers[m.find_layer("dropout")].rate, 0.5);
  EXPECT_EQ(m.layers[m.find_layer("flatten")].input_shape, (Shape{16, 16, 256}));
  EXPECT_EQ(m.input.height, 256);
}

TEST(BaseCnnTest, RejectsSingleClass) { EXPECT_THROW(build_base_cnn(1), ConfigError); }

TEST(TransferHeadTest, OutputsAreDistributions) {
  Rng rng = make_rng(40);
  for (Index k : {6, 2}) {
    const ModelGraph m = attach_transfer_head(build_mobilenet(false, {.input_size = 32}), k, 1);
    EXPECT_EQ(m.output_width(), k);
    EXPECT_EQ(m.layers[m.head_begin].name, "head_gap");
    const TensorF x = random_tensor({3, 32, 32, 3}, rng);
    const TensorF p = forward(m, m.params, x);
    ASSERT_EQ(p.shape(), (Shape{3, 1, 1, k}));
    for (Index n = 0; n < 3; ++n) {
      EXPECT_NEAR(p.matrix(k).row(n).sum(), 1.0f, 1e-5f);
      EXPECT_TRUE((p.matrix(k).row(n).array() >= 0).all());
    }
  }
}

TEST(TransferHeadTest, HeadWidths) {
  const ModelGraph m = attach_transfer_head(build_mobilenet(false, {.input_size = 32}), 6, 1);
  EXPECT_EQ(m.params.at("head_dense_1024/kernel").shape(), (Shape{1024, 1024}));
  EXPECT_EQ(m.params.at("head_dense_512/kernel").shape(), (Shape{1024, 512}));
  EXPECT_EQ(m.params.at("head_dense_256/kernel").shape(), (Shape{512, 256}));
  EXPECT_EQ(m.params.at("head_logits/kernel").shape(), (Shape{256, 6}));
  EXPECT_EQ(m.layers.back().kind, LayerKind::kSoftmax);
}

TEST(TransferHeadTest, RefusesBackboneWithClassifier) {
  EXPECT_THROW(attach_transfer_head(build_mobilenet(true, {.input_size = 32}), 6), ConfigError);
}

TEST(TransferHeadTest, InitIsReproduciblePerSeed) {
  const ModelGraph backbone = build_mobilenet(false, {.input_size = 32});
  const ModelGraph a = attach_transfer_head(backbone, 6, 9);
  const ModelGraph b = attach_transfer_head(backbone, 6, 9);
  const ModelGraph c = attach_transfer_head(backbone, 6, 10);
  EXPECT_EQ(a.params, b.params);
  EXPECT_NE(a.params.at("head_logits/kernel"), c.params.at("head_logits/kernel"));
  EXPECT_EQ(a.params.at("conv1/kernel"), c.params.at("conv1/kernel"));
}

TEST(InitTest, HeUniformBoundsAndZeroBias) {
  const ModelGraph m = build_base_cnn(6, {.input_size = 32});
  const TensorF& k = m.params.at("conv_2/kernel");
  const float limit = std::sqrt(6.0f / (3 * 3 * 32));
  EXPECT_LE(k.values().cwiseAbs().maxCoeff(), limit);
  EXPECT_GT(k.values().cwiseAbs().maxCoeff(), 0.9f * limit);
  EXPECT_EQ(m.params.at("dense_1/bias").values().cwiseAbs().maxCoeff(), 0.0f);
  EXPECT_EQ(m.params.at("bn_1/gamma").values().minCoeff(), 1.0f);
  EXPECT_EQ(m.params.at("bn_1/moving_variance").values().minCoeff(), 1.0f);
}

TEST(ReplaceClassifierTest, ResizesOnlyTheClassifier) {
  const ModelGraph top = build_mobilenet(true, {.input_size = 32});
  const ModelGraph m = replace_classifier(top, 6, 3);
  EXPECT_EQ(m.output_width(), 6);
  EXPECT_EQ(m.params.at("predictions/kernel").shape(), (Shape{1024, 6}));
  EXPECT_EQ(m.params.at("conv_pw_13/kernel"), top.params.at("conv_pw_13/kernel"));
  EXPECT_EQ(m.layers.size(), top.layers.size());
}

TEST(FreezeTest, BoundaryCases) {
  const ModelGraph base = attach_transfer_head(build_mobilenet(false, {.input_size = 32}), 6);
  const ModelGraph none = set_trainable_boundary(base, 0);
  EXPECT_EQ(census(none).frozen_parameters, 21888);  // moving statistics only
  for (const auto& l : none.layers) EXPECT_TRUE(l.trainable);

  const ModelGraph all = set_trainable_boundary(base, base.layers.size());
  EXPECT_EQ(census(all).trainable_parameters, 0);

  EXPECT_THROW(set_trainable_boundary(base, base.layers.size() + 1), ConfigError);
}

TEST(FreezeTest, FirstTwentyLayers) {
  const ModelGraph m = set_trainable_boundary(build_mobilenet(false, {.input_size = 32}), 20);
  EXPECT_FALSE(m.layers[19].trainable);
  EXPECT_EQ(m.layers[19].name, "conv_pw_3_bn");
  EXPECT_TRUE(m.layers[20].trainable);
  EXPECT_EQ(m.layers[20].name, "conv_pw_3_relu");
  for (std::size_t i = 0; i < m.layers.size(); ++i) EXPECT_EQ(m.layers[i].trainable, i >= 20);
}

TEST(SummaryTest, ListsEveryLayerAndTotals) {
  const ModelGraph m = build_base_cnn(6, {.input_size = 32});
  const std::string s = summarize(m);
  for (const auto& l : m.layers) EXPECT_NE(s.find(l.name), std::string::npos) << l.name;
  EXPECT_NE(s.find("Total params: " + std::to_string(census(m).parameters)), std::string::npos);
  EXPECT_NE(s.find("Trainable params:"), std::string::npos);
}

TEST(BuilderTest, RejectsDuplicateNamesAndBadShapes) {
  SequentialBuilder b(Shape4{8, 8, 3}, 0);
  b.conv("c", 4, 3, 1);
  EXPECT_THROW(b.conv("c", 4, 3, 1), ConfigError);
  b.flatten("f");
  EXPECT_THROW(b.maxpool("p"), ShapeError);
}

}  // namespace
}  // namespace fruitnet
