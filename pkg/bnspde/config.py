verbose = True          # print progress messages through utils.log
verify_finite = True    # check that every stepped state is finite
timers = False          # report ScopedTimer durations
progress = True         # show tqdm progress bars for Monte Carlo loops
