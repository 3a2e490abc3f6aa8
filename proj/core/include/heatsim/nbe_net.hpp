#pragma once
#include "heatsim/depprocess.hpp"
#include "heatsim/summaries.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace heatsim {

// tensor slicing of SummaryBundle::flat()
struct BundleShape {
    int chi_c = 3, chi_h = 10, chi_w = 11;
    int atdf_len = 11;
    int qp_h = 3, qp_w = 10;
    int iqr_len = 10;
    int mado_side = 21;

    static BundleShape from(const SummaryConfig& cfg);
    std::size_t flat_len() const;
    bool operator==(const BundleShape&) const = default;
};

// Multi-branch convolutional regressor from summary tensors to the 8
// dependence parameters, squashed into the prior box by a scaled sigmoid.
class EstimatorNet {
  public:
    EstimatorNet() = default;
    EstimatorNet(const BundleShape& shape, const PriorBox& box, std::uint64_t seed);

    const BundleShape& shape() const { return shape_; }
    const PriorBox& prior_box() const { return box_; }
    std::size_t parameter_count() const;

    std::array<double, 8> predict_normalized(const float* flat) const;
    DepParams predict(const std::vector<double>& flat) const;

    // forward + backward + one Adam step; x is count rows of flat_len floats,
    // y_norm count rows of 8; returns the batch MSE
    double train_batch(const float* x, const float* y_norm, int count, double lr);
    // batch MSE without updating weights
    double eval_batch(const float* x, const float* y_norm, int count) const;
    void reset_optimizer();

    void save(const std::string& path) const; // binary weights plus <path>.json manifest
    static EstimatorNet load(const std::string& path);
    std::uint64_t weights_digest() const;

  private:
    struct Conv {
        int cin = 0, cout = 0, kh = 0, kw = 0, H = 0, W = 0; // same padding
        std::vector<float> w, b; // w: cout x (cin*kh*kw)
    };
    struct Dense {
        int in = 0, out = 0;
        std::vector<float> w, b; // w: out x in
    };
    struct Adam {
        std::vector<float> m, v;
    };

    void build(std::uint64_t seed);
    std::vector<std::vector<float>*> tensors();
    std::vector<const std::vector<float>*> tensors() const;

    BundleShape shape_;
    PriorBox box_;
    // branch order: chi, mado, qp, atdf, iqr; two convs each, then the head
    std::vector<Conv> convs_;
    Dense d1_, d2_, d3_;
    std::vector<Adam> adam_;
    long adam_t_ = 0;

    friend struct NetKernels;
};

} // namespace heatsim
