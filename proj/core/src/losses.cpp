#include "bssard/losses.hpp"

namespace bssard::losses {

namespace {

ag::Var<double> row(ag::Graph<double>& g, std::span<const double> p) {
  ag::Mat<double> m(1, static_cast<int>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) m(0, static_cast<int>(i)) = p[i];
  return g.constant(std::move(m));
}

}  // namespace

double gen_cls_loss(std::span<const double> p_d_fake) {
  ag::Graph<double> g;
  return gen_cls_loss(row(g, p_d_fake)).scalar();
}

double gen_loc_loss(std::span<const double> p_s_fake, std::span<const double> p_e_fake, const Moment& fake) {
  ag::Graph<double> g;
  return gen_loc_loss(row(g, p_s_fake), row(g, p_e_fake), fake).scalar();
}

double gen_total(double loc, double cls, double lambda1) { return loc + lambda1 * cls; }

double disc_cls_loss(std::span<const double> p_d_real, std::span<const double> p_d_fake) {
  ag::Graph<double> g;
  return disc_cls_loss(row(g, p_d_real), row(g, p_d_fake)).scalar();
}

double disc_loc_loss(std::span<const double> p_s_real, std::span<const double> p_e_real,
                     std::span<const double> p_s_fake, std::span<const double> p_e_fake, const Moment& real) {
  ag::Graph<double> g;
  return disc_loc_loss(row(g, p_s_real), row(g, p_e_real), row(g, p_s_fake), row(g, p_e_fake), real).scalar();
}

double kl_regularizer(std::span<const double> p_s_real, std::span<const double> p_e_real,
                      std::span<const double> p_s_fake, std::span<const double> p_e_fake) {
  ag::Graph<double> g;
  return kl_regularizer(row(g, p_s_real), row(g, p_e_real), row(g, p_s_fake), row(g, p_e_fake)).scalar();
}

double disc_total(double loc, double cls, double kl, double lambda2, double lambda3) {
  return loc + lambda2 * cls + lambda3 * kl;
}

}  // namespace bssard::losses
