#include "toyfashion/losses.hpp"

namespace toyfashion {

double denoise_loss(const Tensor& eps_pred, const Tensor& eps_true) {
    require(eps_pred.same_shape(eps_true), ErrorKind::Shape,
            "denoise_loss: shape mismatch " + eps_pred.shape_str() + " vs " + eps_true.shape_str());
    const double* a = eps_pred.data();
    const double* b = eps_true.data();
    int64_t n = eps_pred.numel();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s / static_cast<double>(n);
}

Var denoise_loss(const Var& eps_pred, const Var& eps_true) { return mse(eps_pred, eps_true); }

double pose_loss(const Tensor& eps_pred, const Tensor& eps_true) { return denoise_loss(eps_pred, eps_true); }
Var pose_loss(const Var& eps_pred, const Var& eps_true) { return denoise_loss(eps_pred, eps_true); }

Tensor downsample_area(const Tensor& m, int64_t th, int64_t tw, bool binarize) {
    require(m.rank() == 3 || m.rank() == 4, ErrorKind::Shape, "downsample_area: rank-3/4 input expected");
    int64_t lead = (m.rank() == 4) ? m.dim(0) * m.dim(1) : m.dim(0);
    int64_t H = m.dim(m.rank() - 2), W = m.dim(m.rank() - 1);
    require(H % th == 0 && W % tw == 0, ErrorKind::Shape, "downsample_area: non-integer scale factor");
    int64_t fh = H / th, fw = W / tw;
    std::vector<int64_t> out_shape(m.shape());
    out_shape[m.rank() - 2] = th;
    out_shape[m.rank() - 1] = tw;
    Tensor out(out_shape);
    const double* src = m.data();
    double* dst = out.data();
    double inv = 1.0 / static_cast<double>(fh * fw);
    for (int64_t l = 0; l < lead; ++l)
        for (int64_t y = 0; y < th; ++y)
            for (int64_t x = 0; x < tw; ++x) {
                double s = 0.0;
                for (int64_t dy = 0; dy < fh; ++dy)
                    for (int64_t dx = 0; dx < fw; ++dx)
                        s += src[(l * H + y * fh + dy) * W + x * fw + dx];
                double v = s * inv;
                if (binarize) v = v >= 0.5 ? 1.0 : 0.0;
                dst[(l * th + y) * tw + x] = v;
            }
    return out;
}

double region_loss(const std::vector<BlockMaskSet>& pred_sites, const Tensor& gt_masks, bool binarize_gt) {
    require(!pred_sites.empty(), ErrorKind::Config, "region_loss: no supervised sites");
    require(gt_masks.rank() == 3, ErrorKind::Shape, "region_loss: gt must be [N,H,W]");
    int64_t N = gt_masks.dim(0);
    double total = 0.0;
    for (const auto& site : pred_sites) {
        const Tensor& p = site.masks;
        require(p.rank() == 3 || p.rank() == 4, ErrorKind::Shape, "region_loss: pred must be [N,h,w] or [B,N,h,w]");
        int64_t pn = (p.rank() == 3) ? p.dim(0) : p.dim(1);
        require(pn == N, ErrorKind::Shape,
                "region_loss: channel count mismatch at site " + site.site);
        int64_t h = p.dim(p.rank() - 2), w = p.dim(p.rank() - 1);
        Tensor gt = downsample_area(gt_masks, h, w, binarize_gt);
        int64_t reps = (p.rank() == 4) ? p.dim(0) : 1;
        const double* pd = p.data();
        const double* gd = gt.data();
        int64_t per = gt.numel();
        double s = 0.0;
        for (int64_t r = 0; r < reps; ++r)
            for (int64_t i = 0; i < per; ++i) {
                double d = pd[r * per + i] - gd[i];
                s += d * d;
            }
        total += s / static_cast<double>(reps * per);
    }
    return total / static_cast<double>(pred_sites.size());
}

Var region_loss_sites(const std::vector<Var>& pred_sites, const std::vector<Tensor>& gt_resized) {
    require(!pred_sites.empty() && pred_sites.size() == gt_resized.size(), ErrorKind::Config,
            "region_loss_sites: site/gt count mismatch");
    Var acc;
    for (size_t i = 0; i < pred_sites.size(); ++i) {
        require(pred_sites[i]->value.same_shape(gt_resized[i]), ErrorKind::Shape,
                "region_loss_sites: shape mismatch at site " + std::to_string(i));
        Var term = mse(pred_sites[i], make_const(gt_resized[i]));
        acc = acc ? add(acc, term) : term;
    }
    return scale(acc, 1.0 / static_cast<double>(pred_sites.size()));
}

}  // namespace toyfashion
