#pragma once

#include "cla/autodiff.hpp"
#include "cla/networks.hpp"

namespace cla::ssl {

enum class Objective { simsiam, simclr };

const char* objective_name(Objective o);
Objective objective_from_name(const std::string& s);

/// Mean over rows of the negative cosine similarity between row-aligned
/// a and b. Gradients flow into both sides unless marked constant.
ad::Var neg_cosine(ad::Var a, ad::Var b);

/// Symmetric SimSiam loss:
///   L = 0.5*neg_cosine(h(z1), stopgrad(z2)) + 0.5*neg_cosine(h(z2), stopgrad(z1)).
ad::Var simsiam_loss(ad::Graph& g, ad::Var z1, ad::Var z2, nets::Mlp& predictor, bool training);

/// NT-Xent over 2b anchors: each anchor's positive is its counterpart
/// view; the other 2b-2 embeddings are negatives; self-similarity is
/// excluded. Cosine similarities are divided by the temperature.
/// Requires b >= 2.
ad::Var nt_xent(ad::Var z1, ad::Var z2, double temperature);

/// Dispatch on the configured objective.
ad::Var ssl_loss(ad::Graph& g, Objective obj, ad::Var z1, ad::Var z2, nets::Mlp& predictor,
                 bool training, double temperature);

/// The SSL objective as a two-argument alignment loss L_alg(current, target):
/// SimSiam applies the predictor to the current side against the constant
/// target; SimCLR contrasts current rows against target rows.
ad::Var ssl_pair_loss(ad::Graph& g, Objective obj, ad::Var current, ad::Var target,
                      nets::Mlp& predictor, bool training, double temperature);

}  // namespace cla::ssl
