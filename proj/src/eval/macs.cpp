#include "fovea/eval/macs.hpp"

#include <sstream>

namespace fovea::eval {

using models::ArchConfig;
using models::BundleOptions;
using models::Comp;
using models::ConvShape;
using models::NetSpec;

long long conv_macs(const ConvShape& c) {
  return static_cast<long long>(c.out_h) * c.out_w * c.out_c * c.in_c * c.k * c.k;
}

long long dense_macs(long long in, long long out) { return in * out; }

MacsReport count_macs(const ArchConfig& arch, const FrameGeom& geom, const BundleOptions& opt) {
  const int fh = opt.foveal_from_gaze ? geom.fovea_h : geom.periph_h;
  const int fw = opt.foveal_from_gaze ? geom.fovea_w : geom.periph_w;
  models::validate_arch(arch, geom.periph_h, geom.periph_w, fh, fw);

  const auto specs = models::bundle_specs(arch, opt);
  MacsReport rep;
  for (Comp c : models::required_components(opt)) {
    const NetSpec& spec = specs[static_cast<size_t>(c)];
    long long n = 0;
    long long feat = 0;
    if (spec.use_periph) {
      for (const ConvShape& layer : models::periph_plan(arch, geom.periph_h, geom.periph_w))
        n += conv_macs(layer);
      feat += models::periph_feature_dim(arch, geom.periph_h, geom.periph_w);
    }
    if (spec.use_foveal) {
      for (const ConvShape& layer : models::foveal_plan(arch, fh, fw)) n += conv_macs(layer);
      feat += models::foveal_feature_dim(arch, fh, fw);
    }
    long long in = feat;
    for (int i = 0; i < spec.fc_depth; ++i) {
      n += dense_macs(in, arch.fc_width);
      in = arch.fc_width;
    }
    n += dense_macs(in, spec.out_dim);
    rep.nets.push_back({spec.name, n});
    rep.total += n;
  }
  return rep;
}

std::string macs_csv(const MacsReport& report) {
  std::ostringstream os;
  os << "network,macs\n";
  for (const MacsLine& l : report.nets) os << l.name << ',' << l.macs << '\n';
  os << "total," << report.total << '\n';
  return os.str();
}

}  // namespace fovea::eval
