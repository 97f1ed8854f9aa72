#include "anomem/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "anomem/errors.hpp"
#include "anomem/rng.hpp"

namespace anomem {

namespace {

void check_prob(double p, const char* who) {
  if (p < 0.0 || p > 1.0) throw ValidationError(std::string(who) + " must lie in [0,1]");
}

// Bilinear resize of an [h,w,c] block into [oh,ow,c]. Corner-aligned so that
// equal sizes reproduce the input exactly.
std::vector<double> resize_bilinear(const std::vector<double>& src, int h, int w, int c, int oh,
                                    int ow) {
  std::vector<double> dst(1LL * oh * ow * c);
  const double ys = oh > 1 ? static_cast<double>(h - 1) / (oh - 1) : 0.0;
  const double xs = ow > 1 ? static_cast<double>(w - 1) / (ow - 1) : 0.0;
  for (int oy = 0; oy < oh; ++oy) {
    const double fy = oh > 1 ? oy * ys : 0.5 * (h - 1);
    const int y0 = std::min(static_cast<int>(fy), h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < ow; ++ox) {
      const double fx = ow > 1 ? ox * xs : 0.5 * (w - 1);
      const int x0 = std::min(static_cast<int>(fx), w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const double v00 = src[(1LL * y0 * w + x0) * c + ch];
        const double v01 = src[(1LL * y0 * w + x1) * c + ch];
        const double v10 = src[(1LL * y1 * w + x0) * c + ch];
        const double v11 = src[(1LL * y1 * w + x1) * c + ch];
        const double top = v00 + wx * (v01 - v00);
        const double bot = v10 + wx * (v11 - v10);
        dst[(1LL * oy * ow + ox) * c + ch] = top + wy * (bot - top);
      }
    }
  }
  return dst;
}

// Separable gaussian with per-position renormalization at the borders, so a
// constant image stays constant.
void blur_inplace(std::vector<double>& img, int h, int w, int c, double sigma) {
  if (sigma <= 1e-12) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> taps(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
  }
  std::vector<double> tmp(img.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0, wsum = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = x + i;
          if (xx < 0 || xx >= w) continue;
          acc += taps[i + radius] * img[(1LL * y * w + xx) * c + ch];
          wsum += taps[i + radius];
        }
        tmp[(1LL * y * w + x) * c + ch] = acc / wsum;
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0, wsum = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = y + i;
          if (yy < 0 || yy >= h) continue;
          acc += taps[i + radius] * tmp[(1LL * yy * w + x) * c + ch];
          wsum += taps[i + radius];
        }
        img[(1LL * y * w + x) * c + ch] = acc / wsum;
      }
    }
  }
}

}  // namespace

void validate(const AugmentPolicy& p) {
  if (!(p.crop_scale_min > 0.0) || p.crop_scale_min > p.crop_scale_max) {
    throw ValidationError("augment: need 0 < crop_scale_min <= crop_scale_max");
  }
  if (p.crop_scale_max > 1.0) {
    throw ValidationError("augment: crop larger than the image (crop_scale_max > 1)");
  }
  check_prob(p.flip_prob, "augment: flip_prob");
  check_prob(p.color_prob, "augment: color_prob");
  check_prob(p.blur_prob, "augment: blur_prob");
  check_prob(p.noise_prob, "augment: noise_prob");
  if (p.brightness < 0.0 || p.contrast < 0.0 || p.saturation < 0.0) {
    throw ValidationError("augment: jitter strengths must be >= 0");
  }
  if (p.blur_sigma_min < 0.0 || p.blur_sigma_min > p.blur_sigma_max) {
    throw ValidationError("augment: need 0 <= blur_sigma_min <= blur_sigma_max");
  }
  if (p.noise_std < 0.0) throw ValidationError("augment: noise_std must be >= 0");
}

Tensor sample_view(const AugmentPolicy& policy, const Tensor& image, std::uint64_t draw_index) {
  validate(policy);
  if (image.rank() != 3) throw DimensionError("sample_view expects an [H,W,C] image");
  const int h = image.shape()[0], w = image.shape()[1], c = image.shape()[2];
  for (double v : image.values()) {
    if (v < 0.0 || v > 1.0) throw ValidationError("sample_view: image values must lie in [0,1]");
  }

  auto eng = rng::engine(policy.seed, rng::Stream::augment, {draw_index});
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // All decision draws happen up front in a fixed order, so toggling one op
  // never shifts another op's randomness.
  const double scale =
      policy.crop_scale_min +
      (policy.crop_scale_max - policy.crop_scale_min) * unit(eng);
  const double fy = unit(eng), fx = unit(eng);
  const bool do_flip = unit(eng) < policy.flip_prob;
  const bool do_color = unit(eng) < policy.color_prob;
  const double b_jit = policy.brightness * (2.0 * unit(eng) - 1.0);
  const double c_jit = policy.contrast * (2.0 * unit(eng) - 1.0);
  const double s_jit = policy.saturation * (2.0 * unit(eng) - 1.0);
  const bool do_blur = unit(eng) < policy.blur_prob;
  const double sigma =
      policy.blur_sigma_min + (policy.blur_sigma_max - policy.blur_sigma_min) * unit(eng);
  const bool do_noise = unit(eng) < policy.noise_prob;

  // crop + rescale
  const int ch = std::clamp(static_cast<int>(std::lround(h * scale)), 1, h);
  const int cw = std::clamp(static_cast<int>(std::lround(w * scale)), 1, w);
  const int y0 = static_cast<int>(std::lround(fy * (h - ch)));
  const int x0 = static_cast<int>(std::lround(fx * (w - cw)));
  std::vector<double> crop(1LL * ch * cw * c);
  for (int y = 0; y < ch; ++y) {
    for (int x = 0; x < cw; ++x) {
      for (int k = 0; k < c; ++k) {
        crop[(1LL * y * cw + x) * c + k] = image.at({y0 + y, x0 + x, k});
      }
    }
  }
  std::vector<double> out = (ch == h && cw == w)
                                ? std::move(crop)
                                : resize_bilinear(crop, ch, cw, c, h, w);

  if (do_flip) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w / 2; ++x) {
        for (int k = 0; k < c; ++k) {
          std::swap(out[(1LL * y * w + x) * c + k], out[(1LL * y * w + (w - 1 - x)) * c + k]);
        }
      }
    }
  }

  if (do_color) {
    double mean = 0.0;
    for (double v : out) mean += v;
    mean /= static_cast<double>(out.size());
    for (std::size_t i = 0; i < out.size(); i += c) {
      double gray = 0.0;
      for (int k = 0; k < c; ++k) gray += out[i + k];
      gray /= c;
      for (int k = 0; k < c; ++k) {
        double v = out[i + k] + b_jit;                  // brightness shift
        v = mean + (1.0 + c_jit) * (v - mean);          // contrast about the image mean
        v = gray + (1.0 + s_jit) * (v - gray);          // saturation about the pixel gray
        out[i + k] = v;
      }
    }
  }

  if (do_blur) blur_inplace(out, h, w, c, sigma);

  if (do_noise && policy.noise_std > 0.0) {
    std::normal_distribution<double> gauss(0.0, policy.noise_std);
    for (auto& v : out) v += gauss(eng);
  }

  for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
  return Tensor(image.shape(), std::move(out));
}

}  // namespace anomem
