"AoII-optimal sampling thresholds for CTMC sources." ""
