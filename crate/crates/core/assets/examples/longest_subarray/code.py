from typing import List, Optional
import sys

def longest_subarray_with_sum_limit(nums: Optional[List[int]], target: Optional[int]) -> List[int]:
    # Validate inputs
    if not isinstance(nums, list) or not all(isinstance(num, int) for num in nums):
        sys.stderr.write('Invalid input: nums must be a list of integers.')
        return
    if not isinstance(target, int):
        sys.stderr.write('Invalid input: target must be an integer.')
        return

    n = len(nums)
    left, right = 0, 0
    max_length = 0
    current_sum = 0
    result = []

    # Handle empty list
    if n == 0:
        return []

    # Initial window expansion
    while right < n and current_sum + nums[right] <= target:
        current_sum += nums[right]
        right += 1

    # Update result if a valid window was found during initial expansion
    if right > 0:
        result = nums[left:right]
        max_length = right

    # Main loop: Slide the window through the array
    while right < n:
        current_sum += nums[right]

        # Shrink window from the left if current_sum exceeds target
        while current_sum > target:
            current_sum -= nums[left]
            left += 1

        # Update result if a longer valid window is found
        if right - left + 1 > max_length:
            max_length = right - left + 1
            result = nums[left:right+1]

        right += 1

    return result
