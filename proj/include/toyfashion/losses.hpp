#pragma once

#include <string>
#include <vector>

#include "toyfashion/autograd.hpp"
#include "toyfashion/tensor.hpp"

namespace toyfashion {

// Predicted soft masks of one attention site, one channel per attribute,
// at that site's feature resolution. masks is [N,h,w] or [B,N,h,w].
struct BlockMaskSet {
    std::string site;
    Tensor masks;
};

// mean squared error over all elements
double denoise_loss(const Tensor& eps_pred, const Tensor& eps_true);
Var denoise_loss(const Var& eps_pred, const Var& eps_true);

// identical contract, over the pose channel
double pose_loss(const Tensor& eps_pred, const Tensor& eps_true);
Var pose_loss(const Var& eps_pred, const Var& eps_true);

// area-average downsample of a mask tensor ([N,H,W] or [B,N,H,W]) to (th,tw);
// source dims must be integer multiples of the target dims
Tensor downsample_area(const Tensor& m, int64_t th, int64_t tw, bool binarize = false);

// Per supervised site: resize gt to the site's resolution, take the mean over
// attribute channels and spatial positions of the squared difference; then
// average over sites. Resolution-independent by construction.
double region_loss(const std::vector<BlockMaskSet>& pred_sites, const Tensor& gt_masks,
                   bool binarize_gt = false);

// training-path variant; gt is pre-resized per site by the caller
Var region_loss_sites(const std::vector<Var>& pred_sites, const std::vector<Tensor>& gt_resized);

struct LossReport {
    double denoise = 0.0;
    double region = 0.0;
    double pose = 0.0;
    double total = 0.0;
};

}  // namespace toyfashion
