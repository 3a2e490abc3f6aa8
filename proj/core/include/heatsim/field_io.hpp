#pragma once
#include "heatsim/grid.hpp"

#include <string>
#include <utility>

namespace heatsim {

// Binary field container: 8-byte magic, u64 little-endian header length, JSON
// header (dims, cells, scenario, covariates, provenance), then n*D*T float64
// values little-endian in (s,d,t) row-major order.
void write_field(const std::string& path, const AnomalyField& field, const GridDomain& domain);
std::pair<AnomalyField, GridDomain> read_field(const std::string& path);

// CSV import. values: header cell_id,day,year,value with 1-based day/year.
// cells: header cell_id,lon,lat[,area_km2]. covariates (optional): header
// year,c2[,c3...]; c1 is implicitly 1. Every (cell, day, year) must appear once.
std::pair<AnomalyField, GridDomain> field_from_csv(const std::string& values_csv,
                                                   const std::string& cells_csv,
                                                   Scenario scenario,
                                                   const std::string& covariates_csv = "");

} // namespace heatsim
